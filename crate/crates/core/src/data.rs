//! Dataset bundles on disk, deterministic splits, checkpoints and run
//! artifacts.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{build_csr, CsrGraph, SbmGraph};
use crate::metrics::RunMetrics;
use crate::model::{Model, ModelSpec, ParamSet, PreparedGraph};
use crate::optim::AdamState;
use crate::stfn::RunningStats;
use crate::tensor::Tensor;
use crate::train::{GraphSetTask, NodeTask, TaskData, TrainConfig, Trainer, TrainerState};

pub const FEATURE_MAGIC: &[u8; 4] = b"SGFB";
pub const FEATURE_VERSION: u32 = 1;
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SGCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Contents of `graph.meta.json`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub name: String,
    pub num_nodes: usize,
    pub num_classes: usize,
    pub feature_dim: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    pub fn validate(&self, num_nodes: usize) -> Result<()> {
        let mut seen = HashSet::new();
        for &i in self.train.iter().chain(&self.val).chain(&self.test) {
            if i >= num_nodes {
                return Err(Error::IndexOutOfRange { index: i, num_nodes });
            }
            if !seen.insert(i) {
                return Err(Error::schema("split.json", 0, format!("node {i} appears in more than one split")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetBundle {
    pub meta: DatasetMeta,
    /// Symmetric adjacency without self-loops.
    pub graph: CsrGraph,
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub splits: Splits,
    /// Non-empty lines of `edges.tsv`.
    pub edge_lines: usize,
    /// Node offsets `[0, n_1, n_1 + n_2, ..., N]` when the bundle is a
    /// disjoint union of independent graphs (`graphs.json`).
    pub graph_offsets: Option<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphsFile {
    offsets: Vec<usize>,
}

impl DatasetBundle {
    pub fn validate(&self) -> Result<()> {
        let n = self.meta.num_nodes;
        if self.graph.num_nodes() != n || self.labels.len() != n || self.features.shape() != [n, self.meta.feature_dim] {
            return Err(Error::shape(
                "dataset",
                format!(
                    "{} nodes in meta, graph {}, labels {}, features {:?}",
                    n,
                    self.graph.num_nodes(),
                    self.labels.len(),
                    self.features.shape()
                ),
            ));
        }
        for (node, &label) in self.labels.iter().enumerate() {
            if label >= self.meta.num_classes {
                return Err(Error::LabelOutOfRange {
                    node,
                    label,
                    num_classes: self.meta.num_classes,
                });
            }
        }
        self.splits.validate(n)?;
        if let Some(off) = &self.graph_offsets {
            let ok = off.first() == Some(&0) && off.last() == Some(&n) && off.windows(2).all(|w| w[0] < w[1]);
            if !ok {
                return Err(Error::schema("graphs.json", 0, "offsets must increase strictly from 0 to num_nodes"));
            }
            for &(u, v) in &self.graph.undirected_edges() {
                if off.partition_point(|&o| o <= u) != off.partition_point(|&o| o <= v) {
                    return Err(Error::schema("graphs.json", 0, format!("edge ({u}, {v}) crosses graphs")));
                }
            }
        }
        Ok(())
    }

    /// Undirected edges without self-loops.
    pub fn num_undirected_edges(&self) -> usize {
        self.graph.undirected_edges().len()
    }

    /// Node classification over the whole graph, or over the member graphs
    /// of a union bundle. A member graph belongs to the split of its first node.
    pub fn task(&self, self_loops: bool) -> Result<TaskData> {
        let Some(off) = &self.graph_offsets else {
            return self.node_task(self_loops);
        };
        let edges = self.graph.undirected_edges();
        let mut split_of = vec![3u8; self.meta.num_nodes];
        for (k, ids) in [&self.splits.train, &self.splits.val, &self.splits.test].iter().enumerate() {
            for &i in ids.iter() {
                split_of[i] = k as u8;
            }
        }
        let c = self.meta.feature_dim;
        let mut task = GraphSetTask {
            graphs: Vec::new(),
            node_labels: Vec::new(),
            graph_labels: Vec::new(),
            num_classes: self.meta.num_classes,
            train: Vec::new(),
            val: Vec::new(),
            test: Vec::new(),
        };
        let mut e = 0;
        for (gi, w) in off.windows(2).enumerate() {
            let (lo, hi) = (w[0], w[1]);
            let mut local = Vec::new();
            while e < edges.len() && edges[e].0 < hi {
                local.push((edges[e].0 - lo, edges[e].1 - lo));
                e += 1;
            }
            let g = build_csr(&local, hi - lo, true)?;
            let feats = Tensor::from_vec(&[hi - lo, c], self.features.data()[lo * c..hi * c].to_vec())?;
            task.graphs.push(PreparedGraph::new(&g, feats, self_loops)?);
            task.node_labels.push(self.labels[lo..hi].to_vec());
            task.graph_labels.push(0);
            match split_of[lo] {
                0 => task.train.push(gi),
                1 => task.val.push(gi),
                2 => task.test.push(gi),
                _ => {}
            }
        }
        Ok(TaskData::GraphSet(task))
    }

    pub fn node_task(&self, self_loops: bool) -> Result<TaskData> {
        Ok(TaskData::Node(NodeTask {
            graph: PreparedGraph::new(&self.graph, self.features.clone(), self_loops)?,
            labels: self.labels.clone(),
            num_classes: self.meta.num_classes,
            train: self.splits.train.clone(),
            val: self.splits.val.clone(),
            test: self.splits.test.clone(),
        }))
    }
}

/// Published statistics of the citation benchmarks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NamedStats {
    pub name: &'static str,
    pub nodes: usize,
    /// Published edge count, followed by the count after removing duplicate
    /// and reversed pairs from the commonly distributed edge lists.
    pub edges: [usize; 2],
    pub features: usize,
    pub classes: usize,
    /// Labeled training nodes per class, validation and test sizes.
    pub split: (usize, usize, usize),
}

pub const CITATION_STATS: [NamedStats; 3] = [
    NamedStats {
        name: "cora",
        nodes: 2708,
        edges: [5429, 5278],
        features: 1433,
        classes: 7,
        split: (20, 500, 1000),
    },
    NamedStats {
        name: "citeseer",
        nodes: 3327,
        edges: [4732, 4552],
        features: 3703,
        classes: 6,
        split: (20, 500, 1000),
    },
    NamedStats {
        name: "pubmed",
        nodes: 19717,
        edges: [44338, 44324],
        features: 500,
        classes: 3,
        split: (20, 500, 1000),
    },
];

pub fn named_stats(name: &str) -> Option<&'static NamedStats> {
    CITATION_STATS.iter().find(|s| s.name.eq_ignore_ascii_case(name))
}

/// Checks a bundle against the published statistics of its named dataset.
pub fn check_named_stats(bundle: &DatasetBundle) -> Result<()> {
    let Some(s) = named_stats(&bundle.meta.name) else {
        return Ok(());
    };
    let edges = bundle.num_undirected_edges();
    let ok = bundle.meta.num_nodes == s.nodes
        && bundle.meta.feature_dim == s.features
        && bundle.meta.num_classes == s.classes
        && (s.edges.contains(&edges) || s.edges.contains(&bundle.edge_lines));
    if ok {
        Ok(())
    } else {
        Err(Error::schema(
            "graph.meta.json",
            0,
            format!(
                "{}: found {} nodes, {} edges ({} lines), {} features, {} classes; expected {} / {:?} / {} / {}",
                s.name,
                bundle.meta.num_nodes,
                edges,
                bundle.edge_lines,
                bundle.meta.feature_dim,
                bundle.meta.num_classes,
                s.nodes,
                s.edges,
                s.features,
                s.classes
            ),
        ))
    }
}

fn require(dir: &Path, name: &str) -> Result<PathBuf> {
    let p = dir.join(name);
    if p.is_file() {
        Ok(p)
    } else {
        Err(Error::MissingFile(p))
    }
}

fn parse_index(file: &str, line: usize, field: &str, tok: Option<&str>) -> Result<usize> {
    let tok = tok.ok_or_else(|| Error::schema(file, line, format!("missing {field}")))?;
    tok.trim()
        .parse()
        .map_err(|_| Error::schema(file, line, format!("{field} {tok:?} is not a non-negative integer")))
}

fn read_edges(path: &Path, n: usize) -> Result<(Vec<(usize, usize)>, usize)> {
    let text = fs::read_to_string(path)?;
    let mut edges = Vec::new();
    let mut lines = 0;
    for (i, line) in text.lines().enumerate() {
        let ln = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        lines += 1;
        let mut it = line.split('\t');
        let u = parse_index("edges.tsv", ln, "source", it.next())?;
        let v = parse_index("edges.tsv", ln, "target", it.next())?;
        if it.next().is_some() {
            return Err(Error::schema("edges.tsv", ln, "expected two tab-separated fields"));
        }
        for x in [u, v] {
            if x >= n {
                return Err(Error::schema("edges.tsv", ln, format!("node {x} out of range for {n} nodes")));
            }
        }
        if u == v {
            log::warn!("edges.tsv:{ln}: dropping self-loop on node {u}");
            continue;
        }
        edges.push((u, v));
    }
    Ok((edges, lines))
}

fn read_labels(path: &Path, n: usize, k: usize) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path)?;
    let mut labels = vec![None; n];
    for (i, line) in text.lines().enumerate() {
        let ln = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut it = line.split('\t');
        let node = parse_index("labels.tsv", ln, "node", it.next())?;
        let label = parse_index("labels.tsv", ln, "label", it.next())?;
        if node >= n {
            return Err(Error::schema("labels.tsv", ln, format!("node {node} out of range for {n} nodes")));
        }
        if label >= k {
            return Err(Error::LabelOutOfRange {
                node,
                label,
                num_classes: k,
            });
        }
        if labels[node].replace(label).is_some() {
            return Err(Error::schema("labels.tsv", ln, format!("node {node} labeled twice")));
        }
    }
    labels
        .into_iter()
        .enumerate()
        .map(|(v, l)| l.ok_or_else(|| Error::schema("labels.tsv", 0, format!("node {v} has no label"))))
        .collect()
}

fn read_features_csv(path: &Path, n: usize, c: usize) -> Result<Tensor> {
    let text = fs::read_to_string(path)?;
    let mut data = Vec::with_capacity(n * c);
    let mut rows = 0;
    for (i, line) in text.lines().enumerate() {
        let ln = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let before = data.len();
        for (j, tok) in line.split(',').enumerate() {
            let x: f32 = tok
                .trim()
                .parse()
                .map_err(|_| Error::schema("features.csv", ln, format!("column {} value {tok:?} is not a number", j + 1)))?;
            data.push(x);
        }
        if data.len() - before != c {
            return Err(Error::schema(
                "features.csv",
                ln,
                format!("{} columns, expected {c}", data.len() - before),
            ));
        }
        rows += 1;
    }
    if rows != n {
        return Err(Error::schema("features.csv", rows, format!("{rows} rows, expected {n}")));
    }
    Tensor::from_vec(&[n, c], data)
}

/// Reads a binary feature blob: `"SGFB"`, version, rows, cols as `u32` LE,
/// then row-major `f32` LE.
pub fn read_feature_blob(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path)?;
    if bytes.len() < 16 || &bytes[..4] != FEATURE_MAGIC {
        return Err(Error::CorruptFile(format!("{}: missing SGFB header", path.display())));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != FEATURE_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: FEATURE_VERSION,
        });
    }
    let (rows, cols) = (word(8) as usize, word(12) as usize);
    let body = &bytes[16..];
    if body.len() != rows * cols * 4 {
        return Err(Error::CorruptFile(format!(
            "{}: {} payload bytes for {rows}x{cols}",
            path.display(),
            body.len()
        )));
    }
    let data = body.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
    Tensor::from_vec(&[rows, cols], data)
}

pub fn write_feature_blob(path: &Path, features: &Tensor) -> Result<()> {
    let (rows, cols) = (features.rows(), features.cols());
    let mut out = Vec::with_capacity(16 + features.len() * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    for w in [FEATURE_VERSION, rows as u32, cols as u32] {
        out.extend_from_slice(&w.to_le_bytes());
    }
    for x in features.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

/// Loads and validates a bundle directory. `features.bin` takes precedence
/// over `features.csv` when both exist.
pub fn load_dataset(dir: &Path) -> Result<DatasetBundle> {
    let meta_path = require(dir, "graph.meta.json")?;
    let meta: DatasetMeta = serde_json::from_str(&fs::read_to_string(&meta_path)?)
        .map_err(|e| Error::schema("graph.meta.json", e.line(), e.to_string()))?;
    let n = meta.num_nodes;
    let (edges, edge_lines) = read_edges(&require(dir, "edges.tsv")?, n)?;
    let graph = build_csr(&edges, n, true)?;
    let bin = dir.join("features.bin");
    let features = if bin.is_file() {
        let f = read_feature_blob(&bin)?;
        if f.shape() != [n, meta.feature_dim] {
            return Err(Error::schema(
                "features.bin",
                0,
                format!("shape {:?}, expected [{n}, {}]", f.shape(), meta.feature_dim),
            ));
        }
        f
    } else {
        read_features_csv(&require(dir, "features.csv")?, n, meta.feature_dim)?
    };
    let labels = read_labels(&require(dir, "labels.tsv")?, n, meta.num_classes)?;
    let splits: Splits = serde_json::from_str(&fs::read_to_string(require(dir, "split.json")?)?)
        .map_err(|e| Error::schema("split.json", e.line(), e.to_string()))?;
    let graphs_path = dir.join("graphs.json");
    let graph_offsets = if graphs_path.is_file() {
        let g: GraphsFile = serde_json::from_str(&fs::read_to_string(&graphs_path)?)
            .map_err(|e| Error::schema("graphs.json", e.line(), e.to_string()))?;
        Some(g.offsets)
    } else {
        None
    };
    let bundle = DatasetBundle {
        meta,
        graph,
        features,
        labels,
        splits,
        edge_lines,
        graph_offsets,
    };
    bundle.validate()?;
    check_named_stats(&bundle)?;
    Ok(bundle)
}

/// Writes a bundle in the canonical layout. Edges are written once per
/// undirected pair.
pub fn export_dataset(bundle: &DatasetBundle, dir: &Path, binary_features: bool) -> Result<()> {
    bundle.validate()?;
    fs::create_dir_all(dir)?;
    fs::write(dir.join("graph.meta.json"), serde_json::to_string_pretty(&bundle.meta)?)?;
    let mut edges = String::new();
    for (u, v) in bundle.graph.undirected_edges() {
        edges.push_str(&format!("{u}\t{v}\n"));
    }
    fs::write(dir.join("edges.tsv"), edges)?;
    if binary_features {
        write_feature_blob(&dir.join("features.bin"), &bundle.features)?;
        let _ = fs::remove_file(dir.join("features.csv"));
    } else {
        let mut w = std::io::BufWriter::new(fs::File::create(dir.join("features.csv"))?);
        for v in 0..bundle.features.rows() {
            let row: Vec<String> = bundle.features.row(v).iter().map(|x| x.to_string()).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        w.flush()?;
        let _ = fs::remove_file(dir.join("features.bin"));
    }
    let mut labels = String::new();
    for (v, l) in bundle.labels.iter().enumerate() {
        labels.push_str(&format!("{v}\t{l}\n"));
    }
    fs::write(dir.join("labels.tsv"), labels)?;
    fs::write(dir.join("split.json"), serde_json::to_string(&bundle.splits)?)?;
    match &bundle.graph_offsets {
        Some(off) => fs::write(
            dir.join("graphs.json"),
            serde_json::to_string(&GraphsFile { offsets: off.clone() })?,
        )?,
        None => {
            let _ = fs::remove_file(dir.join("graphs.json"));
        }
    }
    Ok(())
}

/// Seeded split: `labels_per_class` training nodes of every class, then
/// `val` and `test` nodes drawn from the rest.
pub fn standard_splits(
    labels: &[usize],
    num_classes: usize,
    labels_per_class: usize,
    val: usize,
    test: usize,
    seed: u64,
) -> Result<Splits> {
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut taken = vec![0usize; num_classes];
    let mut train = Vec::new();
    let mut rest = Vec::new();
    for &v in &order {
        let c = labels[v];
        if c >= num_classes {
            return Err(Error::LabelOutOfRange {
                node: v,
                label: c,
                num_classes,
            });
        }
        if taken[c] < labels_per_class {
            taken[c] += 1;
            train.push(v);
        } else {
            rest.push(v);
        }
    }
    for (class, &available) in taken.iter().enumerate() {
        if labels_per_class == 0 || available < labels_per_class {
            return Err(Error::InsufficientNodes {
                class,
                available,
                required: labels_per_class.max(1),
            });
        }
    }
    if rest.len() < val + test {
        return Err(Error::InvalidConfig(format!(
            "{} unlabeled nodes cannot supply {val} validation and {test} test nodes",
            rest.len()
        )));
    }
    train.sort_unstable();
    let mut v: Vec<usize> = rest[..val].to_vec();
    let mut t: Vec<usize> = rest[val..val + test].to_vec();
    v.sort_unstable();
    t.sort_unstable();
    Ok(Splits {
        train,
        val: v,
        test: t,
    })
}

/// Disjoint union of generated graphs as one bundle. Graphs are assigned in
/// order to train, validation and test by the given fractions.
pub fn sbm_bundle(name: &str, graphs: &[SbmGraph], num_classes: usize, val_frac: f64, test_frac: f64) -> Result<DatasetBundle> {
    if graphs.is_empty() {
        return Err(Error::EmptyGraph);
    }
    let count = graphs.len();
    let n_test = ((count as f64 * test_frac).round() as usize).min(count);
    let n_val = ((count as f64 * val_frac).round() as usize).min(count - n_test);
    let n_train = count - n_val - n_test;
    if n_train == 0 {
        return Err(Error::EmptyMask);
    }
    let c = graphs[0].features.cols();
    let mut offsets = vec![0];
    let mut edges = Vec::new();
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut splits = Splits::default();
    for (gi, g) in graphs.iter().enumerate() {
        let lo = *offsets.last().unwrap();
        let n = g.graph.num_nodes();
        edges.extend(g.graph.undirected_edges().into_iter().map(|(u, v)| (u + lo, v + lo)));
        data.extend_from_slice(g.features.data());
        labels.extend_from_slice(&g.labels);
        let target = if gi < n_train {
            &mut splits.train
        } else if gi < n_train + n_val {
            &mut splits.val
        } else {
            &mut splits.test
        };
        target.extend(lo..lo + n);
        offsets.push(lo + n);
    }
    let total = *offsets.last().unwrap();
    let bundle = DatasetBundle {
        meta: DatasetMeta {
            name: name.into(),
            num_nodes: total,
            num_classes,
            feature_dim: c,
        },
        graph: build_csr(&edges, total, true)?,
        features: Tensor::from_vec(&[total, c], data)?,
        labels,
        splits,
        edge_lines: edges.len(),
        graph_offsets: Some(offsets),
    };
    bundle.validate()?;
    Ok(bundle)
}

/// Resolves a dataset argument: an existing directory, or a name under
/// `SPIKEGRAPH_DATA_DIR`.
pub fn resolve_dataset_dir(arg: &str) -> Result<PathBuf> {
    let direct = PathBuf::from(arg);
    if direct.is_dir() {
        return Ok(direct);
    }
    if let Ok(root) = std::env::var("SPIKEGRAPH_DATA_DIR") {
        let p = Path::new(&root).join(arg);
        if p.is_dir() {
            return Ok(p);
        }
    }
    Err(Error::MissingFile(direct))
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    spec: ModelSpec,
    cfg: TrainConfig,
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    running: Vec<RunningStats>,
    adam: AdamScalars,
    state: TrainerState,
}

#[derive(Serialize, Deserialize)]
struct AdamScalars {
    lr: f32,
    beta1: f32,
    beta2: f32,
    eps: f32,
    weight_decay: f32,
    step: u64,
}

/// Everything needed to resume training or evaluate a trained model.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub cfg: TrainConfig,
    pub opt: AdamState,
    pub best_params: Vec<Tensor>,
    pub state: TrainerState,
}

impl Checkpoint {
    pub fn from_trainer(t: &Trainer) -> Self {
        Checkpoint {
            model: t.model.clone(),
            cfg: t.cfg.clone(),
            opt: t.opt.clone(),
            best_params: t.best_params.clone(),
            state: t.state(),
        }
    }

    pub fn into_trainer(self) -> Result<Trainer> {
        Trainer::resume(self.model, self.opt, self.best_params, self.cfg, self.state)
    }

    /// The model with its best-validation parameters.
    pub fn best_model(&self) -> Result<Model> {
        let mut params = ParamSet::new();
        for (name, t) in self.model.params.names().iter().zip(&self.best_params) {
            params.push(name.clone(), t.clone());
        }
        let mut m = Model::from_params(self.model.spec.clone(), params)?;
        m.running = self.model.running.clone();
        Ok(m)
    }

    pub fn metrics(&self) -> &RunMetrics {
        &self.state.metrics
    }
}

fn push_f32s(out: &mut Vec<u8>, xs: &[f32]) {
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

/// Layout: magic, version `u32`, header length `u64`, JSON header, then
/// `f32` LE blocks (parameters, Adam first moments, Adam second moments,
/// best parameters), then a CRC-32 of all preceding bytes.
pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    let params = ck.model.params.tensors();
    let header = CheckpointHeader {
        spec: ck.model.spec.clone(),
        cfg: ck.cfg.clone(),
        names: ck.model.params.names().to_vec(),
        shapes: params.iter().map(|t| t.shape().to_vec()).collect(),
        running: ck.model.running.clone(),
        adam: AdamScalars {
            lr: ck.opt.lr,
            beta1: ck.opt.beta1,
            beta2: ck.opt.beta2,
            eps: ck.opt.eps,
            weight_decay: ck.opt.weight_decay,
            step: ck.opt.step,
        },
        state: ck.state.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for t in params {
        push_f32s(&mut out, t.data());
    }
    for m in &ck.opt.m {
        push_f32s(&mut out, m);
    }
    for v in &ck.opt.v {
        push_f32s(&mut out, v);
    }
    for t in &ck.best_params {
        push_f32s(&mut out, t.data());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let bytes = fs::read(path)?;
    let corrupt = |m: &str| Error::CorruptFile(format!("{}: {m}", path.display()));
    if bytes.len() < 20 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(corrupt("not a checkpoint"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().unwrap()) {
        return Err(corrupt("checksum mismatch"));
    }
    let hlen = u64::from_le_bytes(body[8..16].try_into().unwrap()) as usize;
    let json = body.get(16..16 + hlen).ok_or_else(|| corrupt("truncated header"))?;
    let h: CheckpointHeader = serde_json::from_slice(json)?;
    if h.names.len() != h.shapes.len() {
        return Err(corrupt("header name and shape counts differ"));
    }
    let mut floats = body[16 + hlen..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()));
    let sizes: Vec<usize> = h.shapes.iter().map(|s| s.iter().product()).collect();
    let mut block = |shape: &[usize], len: usize| -> Result<Tensor> {
        let data: Vec<f32> = floats.by_ref().take(len).collect();
        if data.len() != len {
            return Err(corrupt("truncated tensor data"));
        }
        Tensor::from_vec(shape, data)
    };
    let mut params = ParamSet::new();
    for ((name, shape), &len) in h.names.iter().zip(&h.shapes).zip(&sizes) {
        params.push(name.clone(), block(shape, len)?);
    }
    let mut m = Vec::new();
    for &len in &sizes {
        m.push(block(&[len], len)?.into_data());
    }
    let mut v = Vec::new();
    for &len in &sizes {
        v.push(block(&[len], len)?.into_data());
    }
    let mut best = Vec::new();
    for (shape, &len) in h.shapes.iter().zip(&sizes) {
        best.push(block(shape, len)?);
    }
    if body.len() != 16 + hlen + 4 * 4 * sizes.iter().sum::<usize>() {
        return Err(corrupt("trailing bytes"));
    }
    let mut model = Model::from_params(h.spec, params)?;
    if h.running.len() != model.running.len() {
        return Err(corrupt("running statistics count"));
    }
    model.running = h.running;
    let opt = AdamState {
        lr: h.adam.lr,
        beta1: h.adam.beta1,
        beta2: h.adam.beta2,
        eps: h.adam.eps,
        weight_decay: h.adam.weight_decay,
        step: h.adam.step,
        m,
        v,
    };
    Ok(Checkpoint {
        model,
        cfg: h.cfg,
        opt,
        best_params: best,
        state: h.state,
    })
}

/// Per-epoch traces as CSV.
pub fn write_metrics_csv(path: &Path, m: &RunMetrics) -> Result<()> {
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(w, "epoch,train_loss,train_acc,val_acc,val_loss,lr")?;
    for e in 0..m.loss_trace.len() {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            e + 1,
            m.loss_trace[e],
            m.train_acc_trace.get(e).copied().unwrap_or(f32::NAN),
            m.val_acc_trace.get(e).copied().unwrap_or(f32::NAN),
            m.val_loss_trace.get(e).copied().unwrap_or(f32::NAN),
            m.lr_trace.get(e).copied().unwrap_or(f32::NAN)
        )?;
    }
    w.flush()?;
    Ok(())
}

/// One-run summary written next to each checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub dataset: String,
    pub model: String,
    pub seed: u64,
    pub test_acc: f32,
    pub best_epoch: usize,
    pub inference_steps: f64,
    pub firing_rates: Vec<f64>,
    pub add_count: u64,
    pub mul_count: u64,
    pub compression_ratio: f64,
    /// Zero in deterministic mode so that outputs are byte-identical.
    pub wall_time_s: f64,
}
