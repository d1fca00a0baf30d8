//! Full-window BPTT training, evaluation, and the measurement probes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{OpCounters, RunMetrics, VarianceStats};
use crate::model::{Forward, Model, ModelSpec, PreparedGraph, Readout};
use crate::optim::AdamState;
use crate::tensor::Tensor;

/// Ratio reported when the spiking side performed no transform work.
pub const RATIO_CAP: f64 = 1e9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plateau {
    pub patience: usize,
    pub factor: f32,
    pub floor: f32,
}

impl Default for Plateau {
    fn default() -> Self {
        Plateau {
            patience: 10,
            factor: 0.5,
            floor: 1e-5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f32,
    pub weight_decay: f32,
    pub epochs: usize,
    pub seed: u64,
    pub deterministic: bool,
    pub trials: usize,
    /// Learning-rate halving on validation-loss plateaus.
    pub plateau: Option<Plateau>,
    /// Graphs per minibatch for multi-graph tasks.
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.01,
            weight_decay: 5e-4,
            epochs: 200,
            seed: 0,
            deterministic: true,
            trials: 10,
            plateau: None,
            batch_size: 128,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if !(self.lr >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig("lr and weight_decay must be non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Transductive node classification on one graph.
#[derive(Clone, Debug)]
pub struct NodeTask {
    pub graph: PreparedGraph,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Inductive tasks over many graphs. With node readout every node of a graph
/// is labeled; with graph readout each graph carries one label.
#[derive(Clone, Debug)]
pub struct GraphSetTask {
    pub graphs: Vec<PreparedGraph>,
    pub node_labels: Vec<Vec<usize>>,
    pub graph_labels: Vec<usize>,
    pub num_classes: usize,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug)]
pub enum TaskData {
    Node(NodeTask),
    GraphSet(GraphSetTask),
}

impl TaskData {
    pub fn num_classes(&self) -> usize {
        match self {
            TaskData::Node(t) => t.num_classes,
            TaskData::GraphSet(t) => t.num_classes,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            TaskData::Node(t) => t.graph.features.cols(),
            TaskData::GraphSet(t) => t.graphs.first().map_or(0, |g| g.features.cols()),
        }
    }

    fn validate(&self) -> Result<()> {
        let (train, val, test, n) = match self {
            TaskData::Node(t) => (&t.train, &t.val, &t.test, t.graph.num_nodes()),
            TaskData::GraphSet(t) => (&t.train, &t.val, &t.test, t.graphs.len()),
        };
        if train.is_empty() {
            return Err(Error::EmptyMask);
        }
        let mut seen = vec![false; n];
        for &i in train.iter().chain(val).chain(test) {
            if i >= n {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    num_nodes: n,
                });
            }
            if seen[i] {
                return Err(Error::InvalidConfig(format!("index {i} appears in more than one split")));
            }
            seen[i] = true;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Accuracy, summed loss and mean decision step on one split.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EvalResult {
    pub accuracy: f32,
    pub loss: f32,
    pub count: usize,
    pub mean_steps: f64,
}

fn eval_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_e7a1)
}

/// Fraction of `mask` rows whose prediction equals the label.
pub fn accuracy(pred: &[usize], labels: &[usize], mask: &[usize]) -> Result<f32> {
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let hits = mask.iter().filter(|&&i| pred[i] == labels[i]).count();
    Ok(hits as f32 / mask.len() as f32)
}

/// Batches of graph indices in order.
fn batches(ids: &[usize], size: usize) -> impl Iterator<Item = &[usize]> {
    ids.chunks(size.max(1))
}

fn graph_batch(task: &GraphSetTask, ids: &[usize], readout: Readout) -> Result<(PreparedGraph, Vec<usize>)> {
    let parts: Vec<&PreparedGraph> = ids.iter().map(|&i| &task.graphs[i]).collect();
    let g = PreparedGraph::batch(&parts)?;
    let labels = match readout {
        Readout::Node => ids.iter().flat_map(|&i| task.node_labels[i].iter().copied()).collect(),
        Readout::Graph => ids.iter().map(|&i| task.graph_labels[i]).collect(),
    };
    Ok((g, labels))
}

pub fn evaluate(model: &Model, data: &TaskData, split: Split, seed: u64) -> Result<EvalResult> {
    let mut rng = eval_rng(seed);
    match data {
        TaskData::Node(task) => {
            let mask = match split {
                Split::Train => &task.train,
                Split::Val => &task.val,
                Split::Test => &task.test,
            };
            if mask.is_empty() {
                return Err(Error::EmptyMask);
            }
            let mut fwd = model.forward(&task.graph, false, &mut rng)?;
            let (pred, steps) = fwd.predictions(&model.spec);
            let acc = accuracy(&pred, &task.labels, mask)?;
            let loss = fwd.tape.cross_entropy(fwd.logits, &task.labels, mask)?;
            let loss = fwd.tape.value(loss).data()[0];
            let mean_steps = mask.iter().map(|&i| steps[i] as f64).sum::<f64>() / mask.len() as f64;
            Ok(EvalResult {
                accuracy: acc,
                loss,
                count: mask.len(),
                mean_steps,
            })
        }
        TaskData::GraphSet(task) => {
            let ids = match split {
                Split::Train => &task.train,
                Split::Val => &task.val,
                Split::Test => &task.test,
            };
            if ids.is_empty() {
                return Err(Error::EmptyMask);
            }
            let (mut hits, mut total, mut loss, mut steps) = (0usize, 0usize, 0f64, 0f64);
            for chunk in batches(ids, 128) {
                let (g, labels) = graph_batch(task, chunk, model.spec.readout)?;
                let mut fwd = model.forward(&g, false, &mut rng)?;
                let (pred, st) = fwd.predictions(&model.spec);
                let all: Vec<usize> = (0..labels.len()).collect();
                hits += all.iter().filter(|&&i| pred[i] == labels[i]).count();
                total += labels.len();
                steps += st.iter().map(|&s| s as f64).sum::<f64>();
                let l = fwd.tape.cross_entropy(fwd.logits, &labels, &all)?;
                loss += fwd.tape.value(l).data()[0] as f64;
            }
            Ok(EvalResult {
                accuracy: hits as f32 / total as f32,
                loss: loss as f32,
                count: total,
                mean_steps: steps / total as f64,
            })
        }
    }
}

/// Serializable position of a ChaCha stream.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::CorruptFile(format!("bad rng position {}", self.word_pos)))?;
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

/// Everything besides parameters and optimizer moments needed to resume.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    pub epoch: usize,
    pub lr: f32,
    pub best_val_loss: f32,
    pub stale_epochs: usize,
    pub metrics: RunMetrics,
    pub rng: RngState,
}

/// An in-progress training session.
pub struct Trainer {
    pub model: Model,
    pub opt: AdamState,
    pub cfg: TrainConfig,
    pub rng: ChaCha8Rng,
    pub epoch: usize,
    pub metrics: RunMetrics,
    pub best_params: Vec<Tensor>,
    best_val_loss: f32,
    stale_epochs: usize,
}

impl Trainer {
    /// Initializes parameters from `cfg.seed`.
    pub fn new(spec: ModelSpec, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let model = Model::new(spec, &mut rng)?;
        Ok(Trainer::from_model(model, cfg, rng))
    }

    pub fn from_model(model: Model, cfg: TrainConfig, rng: ChaCha8Rng) -> Self {
        let opt = AdamState::new(model.params.tensors(), cfg.lr, cfg.weight_decay);
        let best_params = model.params.tensors().to_vec();
        Trainer {
            model,
            opt,
            cfg,
            rng,
            epoch: 0,
            metrics: RunMetrics {
                best_val_acc: -1.0,
                ..RunMetrics::default()
            },
            best_params,
            best_val_loss: f32::MAX,
            stale_epochs: 0,
        }
    }

    pub fn state(&self) -> TrainerState {
        TrainerState {
            epoch: self.epoch,
            lr: self.opt.lr,
            best_val_loss: self.best_val_loss,
            stale_epochs: self.stale_epochs,
            metrics: self.metrics.clone(),
            rng: RngState::capture(&self.rng),
        }
    }

    pub fn resume(
        model: Model,
        opt: AdamState,
        best_params: Vec<Tensor>,
        cfg: TrainConfig,
        state: TrainerState,
    ) -> Result<Self> {
        Ok(Trainer {
            model,
            opt,
            cfg,
            rng: state.rng.restore()?,
            epoch: state.epoch,
            metrics: state.metrics,
            best_params,
            best_val_loss: state.best_val_loss,
            stale_epochs: state.stale_epochs,
        })
    }

    fn apply(&mut self, fwd: &Forward, loss: crate::autodiff::Var) -> Result<()> {
        let grads = fwd.tape.backward(loss)?;
        let g: Vec<Option<&Tensor>> = fwd.params.iter().map(|&p| grads.get(p)).collect();
        self.opt.step(self.model.params.tensors_mut(), &g)
    }

    /// One epoch of updates; returns the summed training loss.
    fn train_epoch(&mut self, data: &TaskData) -> Result<(f32, f32)> {
        match data {
            TaskData::Node(task) => {
                let mut fwd = self.model.forward(&task.graph, true, &mut self.rng)?;
                let loss = fwd.tape.cross_entropy(fwd.logits, &task.labels, &task.train)?;
                let value = fwd.tape.value(loss).data()[0];
                if !value.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        epoch: self.epoch + 1,
                        loss: value,
                    });
                }
                let (pred, _) = fwd.predictions(&self.model.spec);
                let acc = accuracy(&pred, &task.labels, &task.train)?;
                self.model.update_running_stats(&fwd);
                self.apply(&fwd, loss)?;
                Ok((value, acc))
            }
            TaskData::GraphSet(task) => {
                let mut order = task.train.clone();
                use rand::seq::SliceRandom;
                order.shuffle(&mut self.rng);
                let (mut total, mut hits, mut count) = (0f64, 0usize, 0usize);
                for chunk in batches(&order, self.cfg.batch_size) {
                    let (g, labels) = graph_batch(task, chunk, self.model.spec.readout)?;
                    let mut fwd = self.model.forward(&g, true, &mut self.rng)?;
                    let all: Vec<usize> = (0..labels.len()).collect();
                    let loss = fwd.tape.cross_entropy(fwd.logits, &labels, &all)?;
                    let value = fwd.tape.value(loss).data()[0];
                    if !value.is_finite() {
                        return Err(Error::NonFiniteLoss {
                            epoch: self.epoch + 1,
                            loss: value,
                        });
                    }
                    let (pred, _) = fwd.predictions(&self.model.spec);
                    hits += all.iter().filter(|&&i| pred[i] == labels[i]).count();
                    count += labels.len();
                    total += value as f64;
                    self.model.update_running_stats(&fwd);
                    self.apply(&fwd, loss)?;
                }
                Ok((total as f32, hits as f32 / count.max(1) as f32))
            }
        }
    }

    /// Runs one epoch including validation bookkeeping.
    pub fn step_epoch(&mut self, data: &TaskData) -> Result<()> {
        let (loss, train_acc) = self.train_epoch(data)?;
        self.epoch += 1;
        let has_val = match data {
            TaskData::Node(t) => !t.val.is_empty(),
            TaskData::GraphSet(t) => !t.val.is_empty(),
        };
        let val = if has_val {
            evaluate(&self.model, data, Split::Val, self.cfg.seed)?
        } else {
            evaluate(&self.model, data, Split::Train, self.cfg.seed)?
        };
        self.metrics.loss_trace.push(loss);
        self.metrics.train_acc_trace.push(train_acc);
        self.metrics.val_acc_trace.push(val.accuracy);
        self.metrics.val_loss_trace.push(val.loss);
        self.metrics.lr_trace.push(self.opt.lr);
        if val.accuracy > self.metrics.best_val_acc {
            self.metrics.best_val_acc = val.accuracy;
            self.metrics.best_epoch = self.epoch;
            self.best_params = self.model.params.tensors().to_vec();
        }
        if let Some(pl) = self.cfg.plateau {
            if val.loss < self.best_val_loss {
                self.best_val_loss = val.loss;
                self.stale_epochs = 0;
            } else {
                self.stale_epochs += 1;
                if self.stale_epochs >= pl.patience {
                    self.opt.lr = (self.opt.lr * pl.factor).max(pl.floor);
                    self.stale_epochs = 0;
                }
            }
        }
        log::debug!(
            "epoch {} loss {:.4} train {:.3} val {:.3}",
            self.epoch,
            loss,
            train_acc,
            val.accuracy
        );
        Ok(())
    }

    /// Restores the best-validation parameters and fills the test metrics.
    pub fn finish(mut self, data: &TaskData) -> Result<(Model, RunMetrics)> {
        for (p, b) in self.model.params.tensors_mut().iter_mut().zip(&self.best_params) {
            *p = b.clone();
        }
        let test = evaluate(&self.model, data, Split::Test, self.cfg.seed)?;
        let mut m = self.metrics;
        m.test_acc = test.accuracy;
        m.inference_steps = test.mean_steps;
        let probe = probe_graph(data)?;
        let fwd = self.model.forward(&probe, false, &mut eval_rng(self.cfg.seed))?;
        m.firing_rate = fwd.firing_rates();
        m.ops = fwd.counters;
        m.layer_feature_stats = (0..fwd.layer_spikes.len())
            .map(|i| feature_variance_stats(&fwd.decoded(i)))
            .collect();
        Ok((self.model, m))
    }
}

/// The graph used by the probes: the full graph of a node task, or the
/// first test batch of a graph-set task.
pub fn probe_graph(data: &TaskData) -> Result<PreparedGraph> {
    match data {
        TaskData::Node(t) => Ok(t.graph.clone()),
        TaskData::GraphSet(t) => {
            let ids: Vec<usize> = if t.test.is_empty() { t.train.clone() } else { t.test.clone() };
            let take = &ids[..ids.len().min(128)];
            let parts: Vec<&PreparedGraph> = take.iter().map(|&i| &t.graphs[i]).collect();
            PreparedGraph::batch(&parts)
        }
    }
}

/// Trains for `cfg.epochs` and reports with the best-validation parameters.
pub fn train(spec: ModelSpec, data: &TaskData, cfg: &TrainConfig) -> Result<(Model, RunMetrics)> {
    data.validate()?;
    let mut t = Trainer::new(spec, cfg.clone())?;
    for _ in 0..cfg.epochs {
        t.step_epoch(data)?;
    }
    t.finish(data)
}

/// Mean spike probability per spiking layer on the probe graph.
pub fn probe_firing_rates(model: &Model, data: &TaskData, seed: u64) -> Result<Vec<f64>> {
    let g = probe_graph(data)?;
    Ok(model.forward(&g, false, &mut eval_rng(seed))?.firing_rates())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpReport {
    pub counters: OpCounters,
    /// Spike-driven transform operations (additions, plus multiplications
    /// for weighted rank-order inputs).
    pub snn_transform_ops: u64,
    /// Dense multiply-accumulates of the same transforms: `sum N * C_in * C_out`.
    pub dense_transform_ops: u64,
    pub compression_ratio: f64,
}

/// Dense feature-transform work of the spiking layers on `n` nodes.
pub fn dense_transform_ops(spec: &ModelSpec, n: usize) -> u64 {
    (0..spec.num_spiking_layers())
        .map(|i| {
            let cin = if i == 0 {
                spec.input_dim
            } else {
                spec.layer_widths.get(i - 1).copied().unwrap_or(spec.num_classes)
            };
            n as u64 * cin as u64 * spec.transform_width(i) as u64
        })
        .sum()
}

pub fn compression_ratio(dense: u64, snn: u64) -> f64 {
    if snn == 0 {
        RATIO_CAP
    } else {
        (dense as f64 / snn as f64).min(RATIO_CAP)
    }
}

/// Counts one evaluation pass over the probe graph.
pub fn count_ops(model: &Model, data: &TaskData, seed: u64) -> Result<OpReport> {
    let g = probe_graph(data)?;
    let fwd = model.forward(&g, false, &mut eval_rng(seed))?;
    Ok(op_report(&model.spec, g.num_nodes(), fwd.counters))
}

pub fn op_report(spec: &ModelSpec, n: usize, counters: OpCounters) -> OpReport {
    let snn = counters.transform_ops();
    let dense = dense_transform_ops(spec, n);
    OpReport {
        counters,
        snn_transform_ops: snn,
        dense_transform_ops: dense,
        compression_ratio: compression_ratio(dense, snn),
    }
}

/// Global variance over all entries and mean per-feature variance across
/// nodes of an `[N x d]` feature matrix.
pub fn feature_variance_stats(features: &Tensor) -> VarianceStats {
    let (n, d) = (features.rows(), features.cols());
    if n == 0 || d == 0 {
        return VarianceStats::default();
    }
    let total = (n * d) as f64;
    let mean = features.data().iter().map(|&x| x as f64).sum::<f64>() / total;
    let global_var = features.data().iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / total;
    let mut local = 0.0;
    for k in 0..d {
        let m = (0..n).map(|v| features.row(v)[k] as f64).sum::<f64>() / n as f64;
        local += (0..n).map(|v| (features.row(v)[k] as f64 - m).powi(2)).sum::<f64>() / n as f64;
    }
    VarianceStats {
        global_mean: mean,
        global_var,
        local_var: local / d as f64,
    }
}

/// Per-layer variance statistics of a model's rate-decoded features.
pub fn layer_variance_stats(model: &Model, data: &TaskData, seed: u64) -> Result<Vec<VarianceStats>> {
    let g = probe_graph(data)?;
    let fwd = model.forward(&g, false, &mut eval_rng(seed))?;
    Ok((0..fwd.layer_spikes.len())
        .map(|i| feature_variance_stats(&fwd.decoded(i)))
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub seeds: Vec<u64>,
    pub test_acc: Vec<f32>,
    pub mean: f64,
    pub sd: f64,
    pub metrics: Vec<RunMetrics>,
}

/// Sample mean and standard deviation.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Independent runs with seeds `cfg.seed, cfg.seed + 1, ...`, up to `jobs`
/// at a time.
pub fn run_trials(spec: &ModelSpec, data: &TaskData, cfg: &TrainConfig, jobs: usize) -> Result<TrialSummary> {
    let seeds: Vec<u64> = (0..cfg.trials.max(1) as u64).map(|i| cfg.seed + i).collect();
    let run = |seed: u64| {
        let mut c = cfg.clone();
        c.seed = seed;
        train(spec.clone(), data, &c).map(|(_, m)| m)
    };
    let results: Vec<Result<RunMetrics>> = if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
        pool.install(|| seeds.par_iter().map(|&s| run(s)).collect())
    } else {
        seeds.iter().map(|&s| run(s)).collect()
    };
    let metrics = results.into_iter().collect::<Result<Vec<_>>>()?;
    let accs: Vec<f32> = metrics.iter().map(|m| m.test_acc).collect();
    let (mean, sd) = mean_sd(&accs.iter().map(|&a| a as f64).collect::<Vec<_>>());
    Ok(TrialSummary {
        seeds,
        test_acc: accs,
        mean,
        sd,
        metrics,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub knob: String,
    pub value: usize,
    pub residual: bool,
    pub stfn: bool,
    pub mean_acc: f64,
    pub sd_acc: f64,
    pub firing_rate_last: f64,
    pub global_var_last: f64,
    pub local_var_last: f64,
}

fn sweep_row(knob: &str, value: usize, spec: &ModelSpec, s: &TrialSummary) -> SweepRow {
    let n = s.metrics.len().max(1) as f64;
    let avg = |f: &dyn Fn(&RunMetrics) -> f64| s.metrics.iter().map(f).sum::<f64>() / n;
    SweepRow {
        knob: knob.into(),
        value,
        residual: spec.residual,
        stfn: spec.stfn,
        mean_acc: s.mean,
        sd_acc: s.sd,
        firing_rate_last: avg(&|m| m.firing_rate.last().copied().unwrap_or(0.0)),
        global_var_last: avg(&|m| m.layer_feature_stats.last().map_or(0.0, |v| v.global_var)),
        local_var_last: avg(&|m| m.layer_feature_stats.last().map_or(0.0, |v| v.local_var)),
    }
}

/// Trains one configuration per depth. Widths follow `[w0, w1, w1, ...]`
/// taken from the first and last hidden widths of `base`.
pub fn depth_sweep(
    base: &ModelSpec,
    depths: &[usize],
    data: &TaskData,
    cfg: &TrainConfig,
    jobs: usize,
) -> Result<Vec<SweepRow>> {
    let first = *base.layer_widths.first().ok_or_else(|| Error::InvalidConfig("empty widths".into()))?;
    let rest = *base.layer_widths.last().unwrap();
    depths
        .iter()
        .map(|&d| {
            if d < 1 {
                return Err(Error::InvalidConfig("depth must be at least 1".into()));
            }
            let mut spec = base.clone();
            let mut widths = vec![first];
            widths.extend(std::iter::repeat(rest).take(d - 1));
            spec.layer_kinds = vec![*base.layer_kinds.first().unwrap(); d];
            spec.layer_widths = widths;
            let s = run_trials(&spec, data, cfg, jobs)?;
            Ok(sweep_row("depth", d, &spec, &s))
        })
        .collect()
}

/// Trains one configuration per time-window length.
pub fn time_sweep(
    base: &ModelSpec,
    windows: &[usize],
    data: &TaskData,
    cfg: &TrainConfig,
    jobs: usize,
) -> Result<Vec<SweepRow>> {
    windows
        .iter()
        .map(|&t| {
            let mut spec = base.clone();
            spec.t_len = t;
            let s = run_trials(&spec, data, cfg, jobs)?;
            Ok(sweep_row("t", t, &spec, &s))
        })
        .collect()
}
