//! Run configuration: built-in per-dataset defaults, a `key = value` file
//! grammar and command-line overrides, applied in that order.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Coding, EvalStats, LayerKind, ModelSpec, Readout};
use crate::spiking::{EncodeMode, NeuronConfig};
use crate::train::{Plateau, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    GcSnn,
    GaSnn,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::GcSnn => "gc-snn",
            ModelKind::GaSnn => "ga-snn",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitMode {
    /// Use `split.json`; fall back to a seeded split when its train list is empty.
    File,
    /// Always draw a seeded split.
    Standard,
}

/// Every configurable knob. Field names match the configuration keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: String,
    pub model: ModelKind,
    pub widths: Vec<usize>,
    pub heads: usize,
    pub coding: Coding,
    pub stfn: bool,
    pub residual: bool,
    pub t: usize,
    pub vth: f32,
    pub kappa: f32,
    pub nu: f32,
    pub rho: f32,
    pub roc_r: f32,
    pub eval_stats: EvalStats,
    pub encode: EncodeMode,
    pub head_hidden: usize,
    pub lr: f32,
    pub wd: f32,
    pub dropout: f32,
    pub epochs: usize,
    pub trials: usize,
    pub seed: u64,
    pub deterministic: bool,
    pub plateau: bool,
    pub batch_size: usize,
    pub split: SplitMode,
    pub labels_per_class: usize,
    pub val_size: usize,
    pub test_size: usize,
    pub jobs: usize,
    pub out: PathBuf,
}

/// Configuration keys, in documentation order.
pub const KEYS: &[(&str, &str)] = &[
    ("dataset", "dataset directory, or a name under SPIKEGRAPH_DATA_DIR"),
    ("model", "gc-snn | ga-snn"),
    ("widths", "comma-separated hidden spiking widths, e.g. 400,16"),
    ("layers", "hidden layer count; widths become [first, last, last, ...]"),
    ("heads", "attention heads"),
    ("coding", "rate | roc"),
    ("stfn", "on | off"),
    ("residual", "on | off"),
    ("t", "time window length"),
    ("vth", "firing threshold"),
    ("kappa", "membrane leak factor"),
    ("nu", "surrogate gradient width"),
    ("rho", "normalization scale factor"),
    ("roc_r", "rank-order penalty in (0, 1)"),
    ("eval_stats", "batch | running"),
    ("encode", "repeat | bernoulli"),
    ("head_hidden", "hidden width of the readout MLP (0 for linear)"),
    ("lr", "initial learning rate"),
    ("wd", "L2 weight decay"),
    ("dropout", "dropout rate in [0, 1)"),
    ("epochs", "training epochs"),
    ("trials", "independent seeds per run"),
    ("seed", "first seed"),
    ("deterministic", "true | false"),
    ("plateau", "on | off: halve the learning rate on validation plateaus"),
    ("batch_size", "graphs per minibatch for multi-graph data"),
    ("split", "file | standard"),
    ("labels_per_class", "training labels per class for seeded splits"),
    ("val_size", "validation nodes for seeded splits"),
    ("test_size", "test nodes for seeded splits"),
    ("jobs", "parallel trials"),
    ("out", "output directory"),
];

fn bad(key: &str, value: &str, want: &str) -> Error {
    Error::InvalidConfig(format!("{key} = {value:?}: expected {want}"))
}

fn parse<T: std::str::FromStr>(key: &str, value: &str, want: &str) -> Result<T> {
    value.trim().parse().map_err(|_| bad(key, value, want))
}

fn parse_switch(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "on" | "true" | "yes" | "1" => Ok(true),
        "off" | "false" | "no" | "0" => Ok(false),
        _ => Err(bad(key, value, "on or off")),
    }
}

impl RunConfig {
    /// Citation-benchmark protocol for `model`.
    pub fn citation(model: ModelKind) -> Self {
        let base = RunConfig {
            dataset: String::new(),
            model,
            widths: vec![400, 16],
            heads: 1,
            coding: Coding::Rate,
            stfn: true,
            residual: false,
            t: 8,
            vth: 0.25,
            kappa: 1.0,
            nu: 0.5,
            rho: 1.0,
            roc_r: 0.5,
            eval_stats: EvalStats::Batch,
            encode: EncodeMode::Repeat,
            head_hidden: 16,
            lr: 0.01,
            wd: 5e-4,
            dropout: 0.1,
            epochs: 200,
            trials: 10,
            seed: 0,
            deterministic: true,
            plateau: false,
            batch_size: 128,
            split: SplitMode::File,
            labels_per_class: 20,
            val_size: 500,
            test_size: 1000,
            jobs: 1,
            out: PathBuf::from("runs"),
        };
        match model {
            ModelKind::GcSnn => base,
            ModelKind::GaSnn => RunConfig {
                widths: vec![64],
                heads: 8,
                head_hidden: 64,
                lr: 0.005,
                dropout: 0.6,
                ..base
            },
        }
    }

    /// Synthetic multi-graph protocol: four 146-wide layers, an MLP readout,
    /// minibatches of 128 graphs, learning rate 0.001 decayed to 1e-5.
    pub fn synthetic(model: ModelKind) -> Self {
        RunConfig {
            widths: vec![146; 4],
            heads: if model == ModelKind::GaSnn { 2 } else { 1 },
            head_hidden: 73,
            lr: 0.001,
            wd: 0.0,
            dropout: 0.0,
            epochs: 1000,
            plateau: true,
            eval_stats: EvalStats::Running,
            ..RunConfig::citation(ModelKind::GcSnn)
        }
        .with_model(model)
    }

    fn with_model(mut self, model: ModelKind) -> Self {
        self.model = model;
        self
    }

    /// Built-in defaults for a dataset: the synthetic protocol for
    /// multi-graph bundles, the citation protocol otherwise.
    pub fn defaults(model: ModelKind, multi_graph: bool) -> Self {
        if multi_graph {
            RunConfig::synthetic(model)
        } else {
            RunConfig::citation(model)
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "dataset" => self.dataset = v.to_string(),
            "model" => self.model = parse_model(v)?,
            "widths" => {
                self.widths = v
                    .split(',')
                    .map(|w| parse::<usize>(key, w, "comma-separated positive integers"))
                    .collect::<Result<_>>()?;
                if self.widths.is_empty() || self.widths.contains(&0) {
                    return Err(bad(key, value, "comma-separated positive integers"));
                }
            }
            "layers" => {
                let n: usize = parse(key, v, "a positive integer")?;
                if n == 0 {
                    return Err(bad(key, value, "a positive integer"));
                }
                let first = self.widths[0];
                let rest = *self.widths.last().unwrap();
                self.widths = std::iter::once(first).chain(std::iter::repeat(rest).take(n - 1)).collect();
            }
            "heads" => self.heads = parse(key, v, "a positive integer")?,
            "coding" => {
                self.coding = match v {
                    "rate" => Coding::Rate,
                    "roc" => Coding::Roc,
                    _ => return Err(bad(key, value, "rate or roc")),
                }
            }
            "stfn" => self.stfn = parse_switch(key, v)?,
            "residual" => self.residual = parse_switch(key, v)?,
            "t" => self.t = parse(key, v, "a positive integer")?,
            "vth" => self.vth = parse(key, v, "a number")?,
            "kappa" => self.kappa = parse(key, v, "a number")?,
            "nu" => self.nu = parse(key, v, "a number")?,
            "rho" => self.rho = parse(key, v, "a number")?,
            "roc_r" => self.roc_r = parse(key, v, "a number")?,
            "eval_stats" => {
                self.eval_stats = match v {
                    "batch" => EvalStats::Batch,
                    "running" => EvalStats::Running,
                    _ => return Err(bad(key, value, "batch or running")),
                }
            }
            "encode" => {
                self.encode = match v {
                    "repeat" => EncodeMode::Repeat,
                    "bernoulli" => EncodeMode::Bernoulli,
                    _ => return Err(bad(key, value, "repeat or bernoulli")),
                }
            }
            "head_hidden" => self.head_hidden = parse(key, v, "a non-negative integer")?,
            "lr" => self.lr = parse(key, v, "a number")?,
            "wd" => self.wd = parse(key, v, "a number")?,
            "dropout" => self.dropout = parse(key, v, "a number")?,
            "epochs" => self.epochs = parse(key, v, "a positive integer")?,
            "trials" => self.trials = parse(key, v, "a positive integer")?,
            "seed" => self.seed = parse(key, v, "a non-negative integer")?,
            "deterministic" => self.deterministic = parse_switch(key, v)?,
            "plateau" => self.plateau = parse_switch(key, v)?,
            "batch_size" => self.batch_size = parse(key, v, "a positive integer")?,
            "split" => {
                self.split = match v {
                    "file" => SplitMode::File,
                    "standard" => SplitMode::Standard,
                    _ => return Err(bad(key, value, "file or standard")),
                }
            }
            "labels_per_class" => self.labels_per_class = parse(key, v, "a non-negative integer")?,
            "val_size" => self.val_size = parse(key, v, "a non-negative integer")?,
            "test_size" => self.test_size = parse(key, v, "a non-negative integer")?,
            "jobs" => self.jobs = parse(key, v, "a positive integer")?,
            "out" => self.out = PathBuf::from(v),
            _ => return Err(Error::InvalidConfig(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn apply(&mut self, pairs: &[(String, String)]) -> Result<()> {
        for (k, v) in pairs {
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 || self.jobs == 0 {
            return Err(Error::InvalidConfig("trials and jobs must be positive".into()));
        }
        self.train_config().validate()?;
        self.model_spec(1, 2).validate()
    }

    pub fn model_spec(&self, input_dim: usize, num_classes: usize) -> ModelSpec {
        let base = match self.model {
            ModelKind::GcSnn => ModelSpec::gc_snn(input_dim, num_classes),
            ModelKind::GaSnn => ModelSpec::ga_snn(input_dim, num_classes),
        };
        let kind = match self.model {
            ModelKind::GcSnn => LayerKind::Gconv,
            ModelKind::GaSnn => LayerKind::Gattn,
        };
        ModelSpec {
            layer_kinds: vec![kind; self.widths.len()],
            layer_widths: self.widths.clone(),
            heads: self.heads,
            residual: self.residual,
            stfn: self.stfn,
            stfn_rho: self.rho,
            stfn_eval: self.eval_stats,
            coding: self.coding,
            roc_r: self.roc_r,
            t_len: self.t,
            neuron: NeuronConfig {
                v_th: self.vth,
                kappa: self.kappa,
                width: self.nu,
            },
            readout: Readout::Node,
            head_hidden: self.head_hidden,
            dropout: self.dropout,
            encode: self.encode,
            ..base
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            weight_decay: self.wd,
            epochs: self.epochs,
            seed: self.seed,
            deterministic: self.deterministic,
            trials: self.trials,
            plateau: self.plateau.then(Plateau::default),
            batch_size: self.batch_size,
        }
    }

    /// The configuration in the file grammar accepted by [`parse_config`].
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let sw = |b: bool| if b { "on" } else { "off" };
        let widths: Vec<String> = self.widths.iter().map(|w| w.to_string()).collect();
        let _ = writeln!(s, "dataset = {}", self.dataset);
        let _ = writeln!(s, "model = {}", self.model.name());
        let _ = writeln!(s, "widths = {}", widths.join(","));
        let _ = writeln!(s, "heads = {}", self.heads);
        let _ = writeln!(s, "coding = {}", if self.coding == Coding::Rate { "rate" } else { "roc" });
        let _ = writeln!(s, "stfn = {}", sw(self.stfn));
        let _ = writeln!(s, "residual = {}", sw(self.residual));
        let _ = writeln!(s, "t = {}", self.t);
        let _ = writeln!(s, "vth = {}", self.vth);
        let _ = writeln!(s, "kappa = {}", self.kappa);
        let _ = writeln!(s, "nu = {}", self.nu);
        let _ = writeln!(s, "rho = {}", self.rho);
        let _ = writeln!(s, "roc_r = {}", self.roc_r);
        let _ = writeln!(
            s,
            "eval_stats = {}",
            if self.eval_stats == EvalStats::Batch { "batch" } else { "running" }
        );
        let _ = writeln!(
            s,
            "encode = {}",
            if self.encode == EncodeMode::Repeat { "repeat" } else { "bernoulli" }
        );
        let _ = writeln!(s, "head_hidden = {}", self.head_hidden);
        let _ = writeln!(s, "lr = {}", self.lr);
        let _ = writeln!(s, "wd = {}", self.wd);
        let _ = writeln!(s, "dropout = {}", self.dropout);
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "trials = {}", self.trials);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "deterministic = {}", self.deterministic);
        let _ = writeln!(s, "plateau = {}", sw(self.plateau));
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "split = {}", if self.split == SplitMode::File { "file" } else { "standard" });
        let _ = writeln!(s, "labels_per_class = {}", self.labels_per_class);
        let _ = writeln!(s, "val_size = {}", self.val_size);
        let _ = writeln!(s, "test_size = {}", self.test_size);
        let _ = writeln!(s, "jobs = {}", self.jobs);
        let _ = writeln!(s, "out = {}", self.out.display());
        s
    }
}

pub fn parse_model(v: &str) -> Result<ModelKind> {
    match v.trim() {
        "gc-snn" | "gcsnn" | "gc" => Ok(ModelKind::GcSnn),
        "ga-snn" | "gasnn" | "ga" => Ok(ModelKind::GaSnn),
        other => Err(bad("model", other, "gc-snn or ga-snn")),
    }
}

/// Parses `key = value` lines. `#` starts a comment; blank lines are
/// ignored; keys must be known.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>> {
    let known: Vec<&str> = KEYS.iter().map(|(k, _)| *k).collect();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected key = value", i + 1)))?;
        let k = k.trim();
        if !known.contains(&k) {
            return Err(Error::InvalidConfig(format!("line {}: unknown key {k:?}", i + 1)));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn read_config(path: &Path) -> Result<Vec<(String, String)>> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    parse_config(&std::fs::read_to_string(path)?)
}

/// Last value of `key` in `pairs`.
pub fn lookup<'a>(pairs: &'a [(String, String)], key: &str) -> Option<&'a str> {
    pairs.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
}

/// Resolves a configuration from the file pairs and the command-line pairs.
/// `multi_graph` selects the built-in defaults once the dataset is known.
pub fn resolve(
    file: &[(String, String)],
    cli: &[(String, String)],
    multi_graph: impl FnOnce(&str) -> Result<bool>,
) -> Result<RunConfig> {
    let model = match lookup(cli, "model").or_else(|| lookup(file, "model")) {
        Some(m) => parse_model(m)?,
        None => ModelKind::GcSnn,
    };
    let dataset = lookup(cli, "dataset").or_else(|| lookup(file, "dataset")).unwrap_or("");
    let mut cfg = RunConfig::defaults(model, multi_graph(dataset)?);
    cfg.apply(file)?;
    cfg.apply(cli)?;
    cfg.validate()?;
    Ok(cfg)
}
