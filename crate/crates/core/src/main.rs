use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use spikegraph::config::{self, RunConfig, SplitMode};
use spikegraph::data::{
    self, load_checkpoint, resolve_dataset_dir, save_checkpoint, Checkpoint, DatasetBundle, RunSummary, Splits,
};
use spikegraph::graph::{sbm_dataset, SbmMode, SbmSpec};
use spikegraph::model::Model;
use spikegraph::train::{self, evaluate, probe_graph, Split, TaskData, Trainer};
use spikegraph::{Error, Result, Tensor};

#[derive(Parser)]
#[command(name = "spikegraph", version, about = "Spiking graph neural networks")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one or more seeds and write checkpoints, traces and a summary.
    Train(RunArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Write firing-rate, operation, weight, variance and embedding reports.
    Analyze(AnalyzeArgs),
    /// Generate a stochastic block model dataset in the canonical layout.
    GenerateSbm(SbmArgs),
    /// Accuracy versus depth or time-window length.
    Sweep(SweepArgs),
    /// Write rate-decoded node features of one layer as CSV.
    ExportEmbeddings(EmbedArgs),
}

/// Every option mirrors a configuration-file key of the same name.
#[derive(Args, Clone, Default)]
struct RunArgs {
    /// key = value configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory, or a name under SPIKEGRAPH_DATA_DIR
    #[arg(long)]
    dataset: Option<String>,
    /// gc-snn | ga-snn
    #[arg(long)]
    model: Option<String>,
    /// Comma-separated hidden spiking widths
    #[arg(long)]
    widths: Option<String>,
    /// Hidden layer count; widths become [first, last, last, ...]
    #[arg(long)]
    layers: Option<String>,
    /// Attention heads
    #[arg(long)]
    heads: Option<String>,
    /// rate | roc
    #[arg(long)]
    coding: Option<String>,
    /// on | off
    #[arg(long)]
    stfn: Option<String>,
    /// on | off
    #[arg(long)]
    residual: Option<String>,
    /// Time window length
    #[arg(long)]
    t: Option<String>,
    /// Firing threshold
    #[arg(long)]
    vth: Option<String>,
    /// Membrane leak factor
    #[arg(long)]
    kappa: Option<String>,
    /// Surrogate gradient width
    #[arg(long)]
    nu: Option<String>,
    /// Normalization scale factor
    #[arg(long)]
    rho: Option<String>,
    /// Rank-order penalty in (0, 1)
    #[arg(long = "roc-r")]
    roc_r: Option<String>,
    /// batch | running
    #[arg(long = "eval-stats")]
    eval_stats: Option<String>,
    /// repeat | bernoulli
    #[arg(long)]
    encode: Option<String>,
    /// Hidden width of the readout MLP, 0 for linear
    #[arg(long = "head-hidden")]
    head_hidden: Option<String>,
    /// Initial learning rate
    #[arg(long)]
    lr: Option<String>,
    /// L2 weight decay
    #[arg(long)]
    wd: Option<String>,
    /// Dropout rate in [0, 1)
    #[arg(long)]
    dropout: Option<String>,
    /// Training epochs
    #[arg(long)]
    epochs: Option<String>,
    /// Independent seeds
    #[arg(long)]
    trials: Option<String>,
    /// First seed
    #[arg(long)]
    seed: Option<String>,
    /// Zero wall-clock fields so outputs are byte-identical (on by default)
    #[arg(long, num_args = 0..=1, default_missing_value = "on", value_name = "on|off")]
    deterministic: Option<String>,
    /// on | off: halve the learning rate on validation plateaus
    #[arg(long)]
    plateau: Option<String>,
    /// Graphs per minibatch for multi-graph data
    #[arg(long = "batch-size")]
    batch_size: Option<String>,
    /// file | standard
    #[arg(long)]
    split: Option<String>,
    /// Training labels per class for seeded splits
    #[arg(long = "labels-per-class")]
    labels_per_class: Option<String>,
    /// Validation nodes for seeded splits
    #[arg(long = "val-size")]
    val_size: Option<String>,
    /// Test nodes for seeded splits
    #[arg(long = "test-size")]
    test_size: Option<String>,
    /// Parallel trials
    #[arg(long)]
    jobs: Option<String>,
    /// Output directory
    #[arg(long)]
    out: Option<String>,
}

impl RunArgs {
    fn pairs(&self) -> Vec<(String, String)> {
        let fields: [(&str, &Option<String>); 32] = [
            ("dataset", &self.dataset),
            ("model", &self.model),
            ("widths", &self.widths),
            ("layers", &self.layers),
            ("heads", &self.heads),
            ("coding", &self.coding),
            ("stfn", &self.stfn),
            ("residual", &self.residual),
            ("t", &self.t),
            ("vth", &self.vth),
            ("kappa", &self.kappa),
            ("nu", &self.nu),
            ("rho", &self.rho),
            ("roc_r", &self.roc_r),
            ("eval_stats", &self.eval_stats),
            ("encode", &self.encode),
            ("head_hidden", &self.head_hidden),
            ("lr", &self.lr),
            ("wd", &self.wd),
            ("dropout", &self.dropout),
            ("epochs", &self.epochs),
            ("trials", &self.trials),
            ("seed", &self.seed),
            ("deterministic", &self.deterministic),
            ("plateau", &self.plateau),
            ("batch_size", &self.batch_size),
            ("split", &self.split),
            ("labels_per_class", &self.labels_per_class),
            ("val_size", &self.val_size),
            ("test_size", &self.test_size),
            ("jobs", &self.jobs),
            ("out", &self.out),
        ];
        fields
            .iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone())))
            .collect()
    }

    fn resolve(&self) -> Result<RunConfig> {
        let file = match &self.config {
            Some(p) => config::read_config(p).map_err(|e| match e {
                Error::MissingFile(p) => Error::InvalidConfig(format!("config file {} not found", p.display())),
                e => e,
            })?,
            None => Vec::new(),
        };
        let cfg = config::resolve(&file, &self.pairs(), |name| {
            if name.is_empty() {
                return Err(Error::InvalidConfig("no dataset given".into()));
            }
            Ok(resolve_dataset_dir(name)?.join("graphs.json").is_file())
        })?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset directory, or a name under SPIKEGRAPH_DATA_DIR
    #[arg(long)]
    dataset: String,
    /// Split file; defaults to the one saved next to the checkpoint's run
    #[arg(long = "split-file")]
    split_file: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    on: SplitArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: String,
    #[arg(long = "split-file")]
    split_file: Option<PathBuf>,
    /// Output directory for the report CSVs
    #[arg(long)]
    out: PathBuf,
    /// Histogram bins for the weight distributions
    #[arg(long, default_value_t = 50)]
    bins: usize,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: String,
    /// Spiking layer index; defaults to the last
    #[arg(long)]
    layer: Option<usize>,
    /// Output CSV file
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum SbmModeArg {
    Plain,
    Pattern,
    Cluster,
}

#[derive(Args)]
struct SbmArgs {
    #[arg(long, value_enum)]
    mode: SbmModeArg,
    /// Number of graphs
    #[arg(long, default_value_t = 1)]
    graphs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output bundle directory
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    communities: Option<usize>,
    #[arg(long = "min-size")]
    min_size: Option<usize>,
    #[arg(long = "max-size")]
    max_size: Option<usize>,
    #[arg(long = "p-intra")]
    p_intra: Option<f64>,
    #[arg(long = "p-extra")]
    p_extra: Option<f64>,
    /// Feature vocabulary size
    #[arg(long)]
    vocab: Option<usize>,
    /// Planted block size in pattern mode
    #[arg(long = "pattern-size")]
    pattern_size: Option<usize>,
    /// Fraction of graphs (or nodes, for a single graph) held out for validation
    #[arg(long = "val-frac", default_value_t = 0.1)]
    val_frac: f64,
    #[arg(long = "test-frac", default_value_t = 0.1)]
    test_frac: f64,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Knob {
    Depth,
    T,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, value_enum)]
    knob: Knob,
    /// Comma-separated knob values
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<usize>,
    /// Run every point with residual shortcuts off and on
    #[arg(long = "ablate-residual")]
    ablate_residual: bool,
    /// Run every point with normalization off and on
    #[arg(long = "ablate-stfn")]
    ablate_stfn: bool,
}

fn is_config_error(e: &Error) -> bool {
    matches!(
        e,
        Error::InvalidConfig(_) | Error::InvalidRate(_) | Error::InvalidPenalty(_) | Error::OutOfRange { .. }
    )
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let res = match cli.cmd {
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Analyze(a) => cmd_analyze(&a),
        Command::GenerateSbm(a) => cmd_generate_sbm(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::ExportEmbeddings(a) => cmd_export_embeddings(&a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if is_config_error(&e) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

/// Loads the bundle and fixes its splits according to the configuration.
fn load_data(cfg: &RunConfig) -> Result<(DatasetBundle, TaskData)> {
    let dir = resolve_dataset_dir(&cfg.dataset)?;
    let mut bundle = data::load_dataset(&dir)?;
    let seeded = cfg.split == SplitMode::Standard || bundle.splits.train.is_empty();
    if seeded && bundle.graph_offsets.is_none() {
        bundle.splits = data::standard_splits(
            &bundle.labels,
            bundle.meta.num_classes,
            cfg.labels_per_class,
            cfg.val_size,
            cfg.test_size,
            cfg.seed,
        )?;
    }
    let task = bundle.task(true)?;
    Ok((bundle, task))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

#[derive(Serialize)]
struct TrainReport {
    dataset: String,
    model: String,
    trials: usize,
    seeds: Vec<u64>,
    test_acc: Vec<f32>,
    mean_test_acc: f64,
    sd_test_acc: f64,
    runs: Vec<RunSummary>,
}

fn run_one(cfg: &RunConfig, bundle: &DatasetBundle, task: &TaskData, trial: usize) -> Result<RunSummary> {
    let seed = cfg.seed + trial as u64;
    let mut tcfg = cfg.train_config();
    tcfg.seed = seed;
    let spec = cfg.model_spec(bundle.meta.feature_dim, bundle.meta.num_classes);
    let start = Instant::now();
    let mut trainer = Trainer::new(spec, tcfg)?;
    for _ in 0..cfg.epochs {
        trainer.step_epoch(task)?;
    }
    let dir = cfg.out.join(format!("trial{trial}"));
    fs::create_dir_all(&dir)?;
    save_checkpoint(&Checkpoint::from_trainer(&trainer), &dir.join("checkpoint.sgck"))?;
    let (model, metrics) = trainer.finish(task)?;
    let n = probe_graph(task)?.num_nodes();
    let ops = train::op_report(&model.spec, n, metrics.ops);
    data::write_metrics_csv(&dir.join("metrics.csv"), &metrics)?;
    let summary = RunSummary {
        dataset: bundle.meta.name.clone(),
        model: cfg.model.name().into(),
        seed,
        test_acc: metrics.test_acc,
        best_epoch: metrics.best_epoch,
        inference_steps: metrics.inference_steps,
        firing_rates: metrics.firing_rate.clone(),
        add_count: ops.counters.total_adds(),
        mul_count: ops.counters.total_muls(),
        compression_ratio: ops.compression_ratio,
        wall_time_s: if cfg.deterministic {
            0.0
        } else {
            start.elapsed().as_secs_f64()
        },
    };
    write_json(&dir.join("summary.json"), &summary)?;
    log::info!(
        "trial {trial} seed {seed}: test accuracy {:.4}, best epoch {}",
        summary.test_acc,
        summary.best_epoch
    );
    Ok(summary)
}

fn cmd_train(a: &RunArgs) -> Result<()> {
    let cfg = a.resolve()?;
    let (bundle, task) = load_data(&cfg)?;
    fs::create_dir_all(&cfg.out)?;
    fs::write(cfg.out.join("config.txt"), cfg.to_kv())?;
    write_json(&cfg.out.join("split.json"), &bundle.splits)?;
    let trials: Vec<usize> = (0..cfg.trials).collect();
    let runs: Vec<Result<RunSummary>> = if cfg.jobs > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
        pool.install(|| trials.par_iter().map(|&i| run_one(&cfg, &bundle, &task, i)).collect())
    } else {
        trials.iter().map(|&i| run_one(&cfg, &bundle, &task, i)).collect()
    };
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let accs: Vec<f64> = runs.iter().map(|r| r.test_acc as f64).collect();
    let (mean, sd) = train::mean_sd(&accs);
    let report = TrainReport {
        dataset: bundle.meta.name.clone(),
        model: cfg.model.name().into(),
        trials: runs.len(),
        seeds: runs.iter().map(|r| r.seed).collect(),
        test_acc: runs.iter().map(|r| r.test_acc).collect(),
        mean_test_acc: mean,
        sd_test_acc: sd,
        runs,
    };
    write_json(&cfg.out.join("summary.json"), &report)?;
    let mut csv = String::from("seed,test_acc,best_epoch,inference_steps,add_count,mul_count,compression_ratio\n");
    for r in &report.runs {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.seed, r.test_acc, r.best_epoch, r.inference_steps, r.add_count, r.mul_count, r.compression_ratio
        ));
    }
    fs::write(cfg.out.join("trials.csv"), csv)?;
    println!(
        "{} {}: test accuracy {:.1} ± {:.1} over {} trial(s)",
        report.dataset,
        report.model,
        100.0 * mean,
        100.0 * sd,
        report.trials
    );
    Ok(())
}

/// Loads a checkpoint's best model and the dataset with the run's splits.
fn load_trained(checkpoint: &Path, dataset: &str, split_file: Option<&Path>) -> Result<(Model, DatasetBundle, TaskData)> {
    let ck = load_checkpoint(checkpoint)?;
    let model = ck.best_model()?;
    let dir = resolve_dataset_dir(dataset)?;
    let mut bundle = data::load_dataset(&dir)?;
    let saved = checkpoint
        .parent()
        .and_then(|p| p.parent())
        .map(|run| run.join("split.json"))
        .filter(|p| p.is_file());
    if let Some(path) = split_file.map(Path::to_path_buf).or(saved) {
        let splits: Splits = serde_json::from_str(&fs::read_to_string(&path)?)?;
        splits.validate(bundle.meta.num_nodes)?;
        bundle.splits = splits;
    }
    let task = bundle.task(model.spec.self_loops)?;
    if task.input_dim() != model.spec.input_dim || task.num_classes() != model.spec.num_classes {
        return Err(Error::InvalidConfig(format!(
            "checkpoint expects {} features and {} classes; dataset has {} and {}",
            model.spec.input_dim,
            model.spec.num_classes,
            task.input_dim(),
            task.num_classes()
        )));
    }
    Ok((model, bundle, task))
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let ck_seed = load_checkpoint(&a.checkpoint)?.cfg.seed;
    let (model, _, task) = load_trained(&a.checkpoint, &a.dataset, a.split_file.as_deref())?;
    let split = match a.on {
        SplitArg::Train => Split::Train,
        SplitArg::Val => Split::Val,
        SplitArg::Test => Split::Test,
    };
    let r = evaluate(&model, &task, split, ck_seed)?;
    #[derive(Serialize)]
    struct Out {
        accuracy: f32,
        loss: f32,
        count: usize,
        mean_inference_steps: f64,
    }
    println!(
        "{}",
        serde_json::to_string(&Out {
            accuracy: r.accuracy,
            loss: r.loss,
            count: r.count,
            mean_inference_steps: r.mean_steps,
        })?
    );
    Ok(())
}

fn write_embeddings(path: &Path, features: &Tensor, labels: Option<&[usize]>) -> Result<()> {
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    let cols: Vec<String> = (0..features.cols()).map(|k| format!("f{k}")).collect();
    writeln!(w, "node,label,{}", cols.join(","))?;
    for v in 0..features.rows() {
        let row: Vec<String> = features.row(v).iter().map(|x| x.to_string()).collect();
        let label = labels.map_or(String::new(), |l| l[v].to_string());
        writeln!(w, "{v},{label},{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

fn probe_labels(bundle: &DatasetBundle, task: &TaskData) -> Vec<usize> {
    match task {
        TaskData::Node(_) => bundle.labels.clone(),
        TaskData::GraphSet(t) => {
            let ids = if t.test.is_empty() { &t.train } else { &t.test };
            ids.iter().take(128).flat_map(|&i| t.node_labels[i].iter().copied()).collect()
        }
    }
}

fn cmd_analyze(a: &AnalyzeArgs) -> Result<()> {
    if a.bins == 0 {
        return Err(Error::InvalidConfig("bins must be positive".into()));
    }
    let seed = load_checkpoint(&a.checkpoint)?.cfg.seed;
    let (model, bundle, task) = load_trained(&a.checkpoint, &a.dataset, a.split_file.as_deref())?;
    fs::create_dir_all(&a.out)?;
    let g = probe_graph(&task)?;
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed ^ 0x5eed_e7a1);
    let fwd = model.forward(&g, false, &mut rng)?;

    let mut fr = String::from("layer,firing_rate\n");
    for (i, r) in fwd.firing_rates().iter().enumerate() {
        fr.push_str(&format!("{},{}\n", i + 1, r));
    }
    fs::write(a.out.join("firing_rates.csv"), fr)?;

    let ops = train::op_report(&model.spec, g.num_nodes(), fwd.counters);
    let mut oc = String::from(
        "dataset,layers,dense_transform_ops,snn_transform_ops,transform_adds,transform_muls,aggregate_adds,aggregate_muls,compression_ratio\n",
    );
    oc.push_str(&format!(
        "{},{},{},{},{},{},{},{},{}\n",
        bundle.meta.name,
        model.spec.num_spiking_layers(),
        ops.dense_transform_ops,
        ops.snn_transform_ops,
        ops.counters.transform_adds,
        ops.counters.transform_muls,
        ops.counters.aggregate_adds,
        ops.counters.aggregate_muls,
        ops.compression_ratio
    ));
    fs::write(a.out.join("ops.csv"), oc)?;

    let mut hist = String::from("param,bin_lo,bin_hi,count\n");
    for (name, t) in model.params.names().iter().zip(model.params.tensors()) {
        if !name.ends_with(".w") {
            continue;
        }
        let lo = t.data().iter().copied().fold(f32::INFINITY, f32::min);
        let hi = t.data().iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let width = if hi > lo { (hi - lo) / a.bins as f32 } else { 1.0 };
        let mut counts = vec![0usize; a.bins];
        for &x in t.data() {
            let b = (((x - lo) / width) as usize).min(a.bins - 1);
            counts[b] += 1;
        }
        for (b, c) in counts.iter().enumerate() {
            let l = lo + b as f32 * width;
            hist.push_str(&format!("{name},{l},{},{c}\n", l + width));
        }
    }
    fs::write(a.out.join("weights_hist.csv"), hist)?;

    let mut var = String::from("layer,global_mean,global_var,local_var\n");
    for i in 0..fwd.layer_spikes.len() {
        let s = train::feature_variance_stats(&fwd.decoded(i));
        var.push_str(&format!("{},{},{},{}\n", i + 1, s.global_mean, s.global_var, s.local_var));
    }
    fs::write(a.out.join("variance.csv"), var)?;

    let last = fwd.layer_spikes.len() - 1;
    let labels = probe_labels(&bundle, &task);
    write_embeddings(&a.out.join("embeddings.csv"), &fwd.decoded(last), Some(&labels))?;
    println!("wrote reports to {}", a.out.display());
    Ok(())
}

fn cmd_export_embeddings(a: &EmbedArgs) -> Result<()> {
    let seed = load_checkpoint(&a.checkpoint)?.cfg.seed;
    let (model, bundle, task) = load_trained(&a.checkpoint, &a.dataset, None)?;
    let g = probe_graph(&task)?;
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed ^ 0x5eed_e7a1);
    let fwd = model.forward(&g, false, &mut rng)?;
    let layers = fwd.layer_spikes.len();
    let layer = a.layer.unwrap_or(layers - 1);
    if layer >= layers {
        return Err(Error::InvalidConfig(format!("layer {layer} out of range for {layers} spiking layers")));
    }
    if let Some(parent) = a.out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let labels = probe_labels(&bundle, &task);
    write_embeddings(&a.out, &fwd.decoded(layer), Some(&labels))?;
    Ok(())
}

fn cmd_generate_sbm(a: &SbmArgs) -> Result<()> {
    let mut spec = match a.mode {
        SbmModeArg::Pattern => SbmSpec::pattern(a.seed),
        SbmModeArg::Cluster => SbmSpec::cluster(a.seed),
        SbmModeArg::Plain => SbmSpec {
            mode: SbmMode::Plain,
            ..SbmSpec::cluster(a.seed)
        },
    };
    if let Some(c) = a.communities {
        spec.num_communities = c;
        if spec.mode == SbmMode::Cluster && a.vocab.is_none() {
            spec.feature_vocab = c + 1;
        }
    }
    if let Some(v) = a.min_size {
        spec.size_range.0 = v;
    }
    if let Some(v) = a.max_size {
        spec.size_range.1 = v;
    }
    if let Some(v) = a.p_intra {
        spec.p_intra = v;
    }
    if let Some(v) = a.p_extra {
        spec.p_extra = v;
    }
    if let Some(v) = a.vocab {
        spec.feature_vocab = v;
    }
    if let Some(v) = a.pattern_size {
        spec.pattern_size = v;
    }
    spec.validate()?;
    if a.graphs == 0 {
        return Err(Error::InvalidConfig("graphs must be positive".into()));
    }
    for f in [a.val_frac, a.test_frac] {
        if !(0.0..1.0).contains(&f) || a.val_frac + a.test_frac >= 1.0 {
            return Err(Error::InvalidConfig("val and test fractions must be in [0, 1) and sum below 1".into()));
        }
    }
    let name = match a.mode {
        SbmModeArg::Plain => "sbm-plain",
        SbmModeArg::Pattern => "sbm-pattern",
        SbmModeArg::Cluster => "sbm-cluster",
    };
    let graphs = sbm_dataset(&spec, a.graphs)?;
    let bundle = if a.graphs == 1 {
        let mut b = data::sbm_bundle(name, &graphs, spec.num_classes(), 0.0, 0.0)?;
        b.graph_offsets = None;
        let n = b.meta.num_nodes;
        let mut order: Vec<usize> = (0..n).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(a.seed));
        let n_val = (n as f64 * a.val_frac).round() as usize;
        let n_test = (n as f64 * a.test_frac).round() as usize;
        let mut s = Splits {
            val: order[..n_val].to_vec(),
            test: order[n_val..n_val + n_test].to_vec(),
            train: order[n_val + n_test..].to_vec(),
        };
        s.train.sort_unstable();
        s.val.sort_unstable();
        s.test.sort_unstable();
        b.splits = s;
        b
    } else {
        data::sbm_bundle(name, &graphs, spec.num_classes(), a.val_frac, a.test_frac)?
    };
    data::export_dataset(&bundle, &a.out, false)?;
    write_json(&a.out.join("sbm.json"), &spec)?;
    println!(
        "wrote {} graph(s), {} nodes, {} edges to {}",
        a.graphs,
        bundle.meta.num_nodes,
        bundle.num_undirected_edges(),
        a.out.display()
    );
    Ok(())
}

fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    let cfg = a.run.resolve()?;
    if a.values.is_empty() || a.values.contains(&0) {
        return Err(Error::InvalidConfig("sweep values must be positive".into()));
    }
    let (bundle, task) = load_data(&cfg)?;
    fs::create_dir_all(&cfg.out)?;
    let residuals: Vec<bool> = if a.ablate_residual { vec![false, true] } else { vec![cfg.residual] };
    let stfns: Vec<bool> = if a.ablate_stfn { vec![false, true] } else { vec![cfg.stfn] };
    let tcfg = cfg.train_config();
    let mut rows = Vec::new();
    for &stfn in &stfns {
        for &residual in &residuals {
            let mut spec = cfg.model_spec(bundle.meta.feature_dim, bundle.meta.num_classes);
            spec.stfn = stfn;
            spec.residual = residual;
            let r = match a.knob {
                Knob::Depth => train::depth_sweep(&spec, &a.values, &task, &tcfg, cfg.jobs)?,
                Knob::T => train::time_sweep(&spec, &a.values, &task, &tcfg, cfg.jobs)?,
            };
            rows.extend(r);
        }
    }
    let mut csv = String::from("knob,value,residual,stfn,mean_acc,sd_acc,firing_rate_last,global_var_last,local_var_last\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.knob,
            r.value,
            r.residual,
            r.stfn,
            r.mean_acc,
            r.sd_acc,
            r.firing_rate_last,
            r.global_var_last,
            r.local_var_last
        ));
    }
    fs::write(cfg.out.join("sweep.csv"), csv)?;
    print!("{}", fs::read_to_string(cfg.out.join("sweep.csv"))?);
    Ok(())
}

