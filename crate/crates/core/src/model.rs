//! Spiking graph networks: convolution and attention layers unrolled over
//! the time window, residual blocks, and node/graph readout heads.

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{dropout_mask, NormConfig, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{sym_normalize, CsrGraph, NormalizedAdjacency};
use crate::metrics::OpCounters;
use crate::spiking::{self, roc_decode, roc_weights, EncodeMode, NeuronConfig};
use crate::stfn::{stfn_apply, stfn_stats, RunningStats, StfnParams, StfnStats};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    /// Degree-normalized graph convolution.
    Gconv,
    /// Multi-head graph attention.
    Gattn,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coding {
    Rate,
    Roc,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Readout {
    Node,
    Graph,
}

/// Where normalization sits relative to neighborhood aggregation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StfnPlacement {
    PostAggregate,
    PreAggregate,
}

/// Statistics used by normalization at evaluation time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalStats {
    /// Recompute per-node statistics on the evaluated graph.
    Batch,
    /// Layer-wide running averages accumulated during training.
    Running,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub num_classes: usize,
    /// One entry per hidden spiking layer.
    pub layer_kinds: Vec<LayerKind>,
    /// Hidden spiking widths. Attention layers concatenate `heads` groups of
    /// `width / heads` channels.
    pub layer_widths: Vec<usize>,
    pub heads: usize,
    pub residual: bool,
    pub stfn: bool,
    pub stfn_rho: f32,
    pub stfn_eps: f32,
    /// Per-node affine parameters for a graph of this many nodes.
    pub stfn_per_node: Option<usize>,
    pub stfn_detach: bool,
    pub stfn_placement: StfnPlacement,
    pub stfn_eval: EvalStats,
    pub coding: Coding,
    pub roc_r: f32,
    /// Apply rank-order weighting to every spiking layer input, not only
    /// to the output decision.
    pub roc_hidden: bool,
    /// Gain on the time-discounted output spikes used as rank-order logits.
    pub roc_logit_scale: f32,
    pub t_len: usize,
    pub neuron: NeuronConfig,
    pub readout: Readout,
    /// Hidden width of the readout MLP; 0 gives a single linear map.
    pub head_hidden: usize,
    pub dropout: f32,
    pub encode: EncodeMode,
    pub leaky_slope: f32,
    pub self_loops: bool,
}

impl ModelSpec {
    /// Graph-convolution network `[input-400-16-output]`.
    pub fn gc_snn(input_dim: usize, num_classes: usize) -> Self {
        ModelSpec {
            input_dim,
            num_classes,
            layer_kinds: vec![LayerKind::Gconv; 2],
            layer_widths: vec![400, 16],
            heads: 1,
            residual: false,
            stfn: true,
            stfn_rho: 1.0,
            stfn_eps: 1e-5,
            stfn_per_node: None,
            stfn_detach: false,
            stfn_placement: StfnPlacement::PostAggregate,
            stfn_eval: EvalStats::Batch,
            coding: Coding::Rate,
            roc_r: 0.5,
            roc_hidden: false,
            roc_logit_scale: 4.0,
            t_len: 8,
            neuron: NeuronConfig::default(),
            readout: Readout::Node,
            head_hidden: 16,
            dropout: 0.1,
            encode: EncodeMode::Repeat,
            leaky_slope: 0.2,
            self_loops: true,
        }
    }

    /// Graph-attention network `[input-64-output]` with 8 heads.
    pub fn ga_snn(input_dim: usize, num_classes: usize) -> Self {
        ModelSpec {
            layer_kinds: vec![LayerKind::Gattn],
            layer_widths: vec![64],
            heads: 8,
            dropout: 0.6,
            head_hidden: 64,
            ..ModelSpec::gc_snn(input_dim, num_classes)
        }
    }

    /// Plain graph-convolution stack of `depth` spiking layers with widths
    /// `[first, rest, rest, ...]`.
    pub fn deep_gc_snn(input_dim: usize, num_classes: usize, depth: usize, first: usize, rest: usize) -> Self {
        let mut widths = vec![first];
        widths.extend(std::iter::repeat(rest).take(depth.saturating_sub(1)));
        ModelSpec {
            layer_kinds: vec![LayerKind::Gconv; depth],
            layer_widths: widths,
            head_hidden: rest,
            ..ModelSpec::gc_snn(input_dim, num_classes)
        }
    }

    /// Spiking layer count, including the rank-order output layer.
    pub fn num_spiking_layers(&self) -> usize {
        self.layer_widths.len() + usize::from(self.coding == Coding::Roc)
    }

    fn layer_kind(&self, i: usize) -> LayerKind {
        // the rank-order output layer reuses the last hidden operator
        self.layer_kinds
            .get(i)
            .or(self.layer_kinds.last())
            .copied()
            .unwrap_or(LayerKind::Gconv)
    }

    fn layer_width(&self, i: usize) -> usize {
        self.layer_widths.get(i).copied().unwrap_or(self.num_classes)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.input_dim == 0 || self.num_classes == 0 {
            return bad("input_dim and num_classes must be positive".into());
        }
        if self.layer_widths.is_empty() && self.coding == Coding::Rate {
            return bad("at least one spiking layer is required".into());
        }
        if self.layer_kinds.len() != self.layer_widths.len() {
            return bad(format!(
                "{} layer kinds for {} widths",
                self.layer_kinds.len(),
                self.layer_widths.len()
            ));
        }
        if self.layer_widths.contains(&0) {
            return bad("layer widths must be positive".into());
        }
        if self.t_len == 0 {
            return bad("time window must be at least 1".into());
        }
        if self.heads == 0 {
            return bad("heads must be at least 1".into());
        }
        for i in 0..self.num_spiking_layers() {
            if self.layer_kind(i) == LayerKind::Gattn
                && !self.is_output_layer(i)
                && self.layer_width(i) % self.heads != 0
            {
                return bad(format!(
                    "attention layer {i} width {} not divisible by {} heads",
                    self.layer_width(i),
                    self.heads
                ));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidRate(self.dropout));
        }
        if self.coding == Coding::Roc && !(self.roc_r > 0.0 && self.roc_r < 1.0) {
            return Err(Error::InvalidPenalty(self.roc_r));
        }
        if self.stfn && !(self.stfn_rho > 0.0 && self.stfn_eps > 0.0) {
            return bad("normalization needs rho > 0 and eps > 0".into());
        }
        self.neuron.validate()
    }

    fn residual_source(&self, i: usize) -> Option<usize> {
        // blocks pair layers (1,2), (3,4), ...; layer 0 stays plain
        (self.residual && i >= 2 && i % 2 == 0).then(|| i - 1)
    }

    fn layer_dims(&self, i: usize) -> (usize, usize) {
        let input = if i == 0 {
            self.input_dim
        } else {
            self.layer_width(i - 1)
        };
        (input, self.layer_width(i))
    }

    /// Whether layer `i` is the class-width output layer of rank-order coding.
    fn is_output_layer(&self, i: usize) -> bool {
        self.coding == Coding::Roc && i + 1 == self.num_spiking_layers()
    }

    /// Columns of the transform weight of layer `i`. Attention heads are
    /// concatenated in hidden layers and averaged in the output layer.
    pub fn transform_width(&self, i: usize) -> usize {
        if self.layer_kind(i) == LayerKind::Gattn && self.is_output_layer(i) {
            self.layer_width(i) * self.heads
        } else {
            self.layer_width(i)
        }
    }

    /// Parameter names, shapes and initializers in storage order.
    fn layout(&self) -> Vec<(String, Vec<usize>, Init)> {
        let mut out = Vec::new();
        for i in 0..self.num_spiking_layers() {
            let (cin, cout) = self.layer_dims(i);
            let tw = self.transform_width(i);
            out.push((format!("layer{i}.w"), vec![cin, tw], Init::FanIn(cin)));
            match self.layer_kind(i) {
                LayerKind::Gconv => {
                    out.push((format!("layer{i}.b"), vec![cout], Init::FanIn(cin)));
                }
                LayerKind::Gattn => {
                    let f = tw / self.heads;
                    out.push((format!("layer{i}.attn"), vec![self.heads, 2 * f], Init::FanIn(2 * f)));
                }
            }
            if self.stfn {
                let shape = match self.stfn_per_node {
                    Some(n) => vec![n, cout],
                    None => vec![cout],
                };
                out.push((format!("layer{i}.lambda"), shape.clone(), Init::Ones));
                out.push((format!("layer{i}.gamma"), shape, Init::Zeros));
            }
            if let Some(src) = self.residual_source(i) {
                let (block_in, _) = self.layer_dims(src);
                if block_in != cout {
                    out.push((format!("layer{i}.proj"), vec![block_in, cout], Init::FanIn(block_in)));
                }
            }
        }
        if self.coding == Coding::Rate {
            let d = self.layer_width(self.num_spiking_layers() - 1);
            let k = self.num_classes;
            if self.head_hidden > 0 {
                let h = self.head_hidden;
                out.push(("head.w1".into(), vec![d, h], Init::FanIn(d)));
                out.push(("head.b1".into(), vec![h], Init::FanIn(d)));
                out.push(("head.w2".into(), vec![h, k], Init::FanIn(h)));
                out.push(("head.b2".into(), vec![k], Init::FanIn(h)));
            } else {
                out.push(("head.w2".into(), vec![d, k], Init::FanIn(d)));
                out.push(("head.b2".into(), vec![k], Init::FanIn(d)));
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug)]
enum Init {
    FanIn(usize),
    Ones,
    Zeros,
}

/// Named parameter tensors in a fixed order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) -> usize {
        self.names.push(name.into());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index(name).map(move |i| &mut self.tensors[i])
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

/// Parameters of one spiking layer, gathered for inspection.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub kind: LayerKind,
    pub w: Tensor,
    pub b: Option<Tensor>,
    pub attn: Option<Tensor>,
    pub heads: usize,
    pub stfn: Option<StfnParams>,
    pub neuron: NeuronConfig,
}

/// A graph (or disjoint batch of graphs) ready for the forward pass.
#[derive(Clone, Debug)]
pub struct PreparedGraph {
    pub adj: Arc<NormalizedAdjacency>,
    /// Sparsity pattern used by attention (includes self-loops when enabled).
    pub structure: Arc<CsrGraph>,
    pub features: Tensor,
    /// Row offsets of each member graph, `[0, n_1, n_1 + n_2, ...]`.
    pub offsets: Vec<usize>,
}

impl PreparedGraph {
    pub fn new(graph: &CsrGraph, features: Tensor, self_loops: bool) -> Result<Self> {
        if features.ndim() != 2 || features.shape()[0] != graph.num_nodes() {
            return Err(Error::shape(
                "prepare_graph",
                format!("features {:?} for {} nodes", features.shape(), graph.num_nodes()),
            ));
        }
        let adj = sym_normalize(graph, self_loops)?;
        let structure = Arc::new(adj.graph().clone());
        Ok(PreparedGraph {
            adj: adj.into_shared(),
            structure,
            offsets: vec![0, graph.num_nodes()],
            features,
        })
    }

    /// Disjoint union of several prepared graphs.
    pub fn batch(parts: &[&PreparedGraph]) -> Result<Self> {
        let first = parts.first().ok_or(Error::EmptyGraph)?;
        let c = first.features.cols();
        let graphs: Vec<&CsrGraph> = parts.iter().map(|p| p.adj.graph()).collect();
        let union = CsrGraph::disjoint_union(&graphs);
        let mut data = Vec::new();
        let mut offsets = vec![0];
        for p in parts {
            if p.features.cols() != c {
                return Err(Error::shape("batch", "feature widths differ"));
            }
            data.extend_from_slice(p.features.data());
            for w in p.offsets.windows(2) {
                offsets.push(offsets.last().unwrap() + (w[1] - w[0]));
            }
        }
        let n = union.num_nodes();
        let structure = Arc::new(union.clone());
        Ok(PreparedGraph {
            adj: NormalizedAdjacency::from_graph(union, first.adj.self_loops_added()).into_shared(),
            structure,
            features: Tensor::from_vec(&[n, c], data)?,
            offsets,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.adj.num_nodes()
    }
}

/// A recorded forward pass.
pub struct Forward {
    pub tape: Tape,
    /// Parameter handles in [`ParamSet`] order.
    pub params: Vec<Var>,
    /// `[N x K]` for node readout, `[G x K]` for graph readout.
    pub logits: Var,
    /// Spikes `[T x N x C]` of every spiking layer.
    pub layer_spikes: Vec<Var>,
    /// Per-node statistics of each normalized layer input.
    pub stfn_stats: Vec<Option<StfnStats>>,
    pub counters: OpCounters,
    pub t_len: usize,
}

impl Forward {
    pub fn logits(&self) -> &Tensor {
        self.tape.value(self.logits)
    }

    /// Mean spike probability per spiking layer.
    pub fn firing_rates(&self) -> Vec<f64> {
        self.layer_spikes
            .iter()
            .map(|&v| spiking::firing_rate(self.tape.value(v)))
            .collect()
    }

    /// Rate-decoded `[N x C]` output of spiking layer `i`.
    pub fn decoded(&self, i: usize) -> Tensor {
        spiking::rate_decode(self.tape.value(self.layer_spikes[i])).expect("spike train")
    }

    /// Predicted class and decision step (1-based) per readout row.
    ///
    /// Rate coding decides at the end of the window. Rank-order coding on
    /// node readout picks the earliest-firing output neuron.
    pub fn predictions(&self, spec: &ModelSpec) -> (Vec<usize>, Vec<usize>) {
        let logits = self.logits();
        if spec.coding == Coding::Roc && spec.readout == Readout::Node {
            let last = *self.layer_spikes.last().expect("spiking layer");
            let spikes = self.tape.value(last);
            let pots = self.tape.potentials(last).expect("unrolled layer");
            let (t_len, n, k) = (spikes.shape()[0], spikes.shape()[1], spikes.shape()[2]);
            let mut classes = Vec::with_capacity(n);
            let mut steps = Vec::with_capacity(n);
            let mut s = vec![0.0; t_len * k];
            let mut p = vec![0.0; t_len * k];
            for v in 0..n {
                for t in 0..t_len {
                    let src = (t * n + v) * k;
                    s[t * k..(t + 1) * k].copy_from_slice(&spikes.data()[src..src + k]);
                    p[t * k..(t + 1) * k].copy_from_slice(&pots.data()[src..src + k]);
                }
                let (c, step) = roc_decode(&s, &p, t_len, k);
                classes.push(c);
                steps.push(step.map_or(t_len, |t| t + 1));
            }
            (classes, steps)
        } else {
            (logits.argmax_rows(), vec![self.t_len; logits.rows()])
        }
    }
}

/// Spike input of a layer: either one `[N x C]` slice repeated over the
/// window or a full `[T x N x C]` train.
#[derive(Clone, Copy)]
struct Signal {
    var: Var,
    is_static: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: ParamSet,
    /// Running normalization statistics, one per spiking layer.
    pub running: Vec<RunningStats>,
    index: HashMap<String, usize>,
}

impl Model {
    pub fn new<R: Rng + ?Sized>(spec: ModelSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut params = ParamSet::new();
        for (name, shape, init) in spec.layout() {
            let t = match init {
                Init::FanIn(f) => Tensor::uniform_fan_in(&shape, f, rng),
                Init::Ones => Tensor::ones(&shape),
                Init::Zeros => Tensor::zeros(&shape),
            };
            params.push(name, t);
        }
        Model::from_params(spec, params)
    }

    /// Rebuilds a model from stored parameters, checking names and shapes.
    pub fn from_params(spec: ModelSpec, params: ParamSet) -> Result<Self> {
        spec.validate()?;
        let layout = spec.layout();
        if layout.len() != params.len() {
            return Err(Error::InvalidConfig(format!(
                "model expects {} parameter tensors, found {}",
                layout.len(),
                params.len()
            )));
        }
        for ((name, shape, _), (have, t)) in layout.iter().zip(params.names.iter().zip(&params.tensors)) {
            if name != have || shape.as_slice() != t.shape() {
                return Err(Error::InvalidConfig(format!(
                    "parameter {have} {:?} does not match expected {name} {:?}",
                    t.shape(),
                    shape
                )));
            }
        }
        let index = params.names.iter().cloned().enumerate().map(|(i, n)| (n, i)).collect();
        let running = vec![RunningStats::default(); spec.num_spiking_layers()];
        Ok(Model {
            spec,
            params,
            running,
            index,
        })
    }

    fn idx(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn layer_params(&self, i: usize) -> Option<LayerParams> {
        let w = self.params.get(&format!("layer{i}.w"))?.clone();
        let stfn = match (
            self.params.get(&format!("layer{i}.lambda")),
            self.params.get(&format!("layer{i}.gamma")),
        ) {
            (Some(l), Some(g)) => Some(StfnParams {
                rho: self.spec.stfn_rho,
                eps: self.spec.stfn_eps,
                lambda: l.clone(),
                gamma: g.clone(),
                p: 2.0,
            }),
            _ => None,
        };
        Some(LayerParams {
            kind: self.spec.layer_kind(i),
            w,
            b: self.params.get(&format!("layer{i}.b")).cloned(),
            attn: self.params.get(&format!("layer{i}.attn")).cloned(),
            heads: self.spec.heads,
            stfn,
            neuron: self.spec.neuron,
        })
    }

    /// Records one forward pass. `training` enables dropout; `rng` drives
    /// dropout masks and Bernoulli input encoding.
    pub fn forward<R: Rng + ?Sized>(&self, g: &PreparedGraph, training: bool, rng: &mut R) -> Result<Forward> {
        let spec = &self.spec;
        let x = &g.features;
        if x.ndim() != 2 || x.cols() != spec.input_dim || x.rows() != g.num_nodes() {
            return Err(Error::shape(
                "model_forward",
                format!("features {:?}, expected [{}, {}]", x.shape(), g.num_nodes(), spec.input_dim),
            ));
        }
        let t_len = spec.t_len;
        let mut tape = Tape::new();
        let params: Vec<Var> = self.params.tensors.iter().map(|t| tape.param(t.clone())).collect();
        let p = |name: String| self.idx(&name).map(|i| params[i]);
        let mut counters = OpCounters::default();

        let mut cur = match spec.encode {
            EncodeMode::Repeat => {
                if let Some(v) = x.first_non_binary() {
                    return Err(Error::NonBinaryInput {
                        op: "model_forward",
                        value: v,
                    });
                }
                Signal {
                    var: tape.constant(x.clone()),
                    is_static: true,
                }
            }
            EncodeMode::Bernoulli => {
                let s = spiking::encode_rate(x, t_len, EncodeMode::Bernoulli, rng)?;
                Signal {
                    var: tape.constant(s.into_tensor()),
                    is_static: false,
                }
            }
        };

        let layers = spec.num_spiking_layers();
        let mut inputs: Vec<Signal> = Vec::with_capacity(layers);
        let mut layer_spikes = Vec::with_capacity(layers);
        let mut stats_out = Vec::with_capacity(layers);
        for i in 0..layers {
            inputs.push(cur);
            let roc_in = spec.coding == Coding::Roc && spec.roc_hidden;
            if roc_in && cur.is_static {
                let b = tape.broadcast_time(cur.var, t_len);
                cur = Signal {
                    var: b,
                    is_static: false,
                };
            }
            let reps = if cur.is_static { t_len as u64 } else { 1 };
            let w = p(format!("layer{i}.w")).expect("layout");
            let z = if roc_in {
                let spikes = tape.value(cur.var);
                let weights = roc_weights(spikes, spec.roc_r)?;
                // factor r^rank on first spikes, 0 elsewhere
                let weighted = tape.mul_const(cur.var, weights)?;
                tape.weighted_spike_matmul(weighted, w, &mut counters, reps)?
            } else {
                tape.spike_matmul(cur.var, w, &mut counters, reps)?
            };

            let lambda = p(format!("layer{i}.lambda"));
            let gamma = p(format!("layer{i}.gamma"));
            let norm = |tape: &mut Tape, s: Var, stats: &mut Option<StfnStats>| -> Result<Var> {
                let (Some(l), Some(gm)) = (lambda, gamma) else {
                    return Ok(s);
                };
                let value = tape.value(s);
                let as3 = if value.ndim() == 2 {
                    value.clone().reshape(&[1, value.rows(), value.cols()])?
                } else {
                    value.clone()
                };
                let batch_stats = stfn_stats(&as3)?;
                if !training && spec.stfn_eval == EvalStats::Running && self.running[i].initialized {
                    let params = StfnParams {
                        rho: spec.stfn_rho,
                        eps: spec.stfn_eps,
                        lambda: tape.value(l).clone(),
                        gamma: tape.value(gm).clone(),
                        p: 2.0,
                    };
                    let frozen = self.running[i].as_stats(as3.shape()[1]);
                    let y = stfn_apply(&as3, &frozen, &params, spec.neuron.v_th)?.reshape(value.shape())?;
                    *stats = Some(batch_stats);
                    return Ok(tape.constant(y));
                }
                *stats = Some(batch_stats);
                tape.stfn(
                    s,
                    l,
                    gm,
                    NormConfig {
                        scale: spec.stfn_rho * spec.neuron.v_th,
                        eps: spec.stfn_eps,
                        detach_stats: spec.stfn_detach,
                    },
                )
            };
            let mut layer_stats = None;

            let mut s = match spec.layer_kind(i) {
                LayerKind::Gconv => {
                    let z = if spec.stfn_placement == StfnPlacement::PreAggregate {
                        norm(&mut tape, z, &mut layer_stats)?
                    } else {
                        z
                    };
                    let s = tape.aggregate(&g.adj, z, &mut counters, reps)?;
                    let b = p(format!("layer{i}.b")).expect("layout");
                    tape.add_bias(s, b)?
                }
                LayerKind::Gattn => {
                    let a = p(format!("layer{i}.attn")).expect("layout");
                    let s = tape.gat(z, a, &g.structure, spec.heads, spec.leaky_slope, &mut counters)?;
                    if cur.is_static {
                        // computed once, but a step-by-step run repeats it T times
                        let per = g.structure.nnz() as u64 * spec.transform_width(i) as u64;
                        counters.aggregate_adds += per * (reps - 1);
                        counters.aggregate_muls += per * (reps - 1);
                    }
                    if spec.is_output_layer(i) {
                        tape.head_mean(s, spec.heads)?
                    } else {
                        s
                    }
                }
            };

            if training && spec.dropout > 0.0 {
                let value = tape.value(s);
                let (n, c) = (value.shape()[value.ndim() - 2], value.cols());
                let mask = dropout_mask(&[n, c], spec.dropout, rng)?;
                let mask = if value.ndim() == 3 {
                    let t = value.shape()[0];
                    let mut d = Vec::with_capacity(t * n * c);
                    for _ in 0..t {
                        d.extend_from_slice(mask.data());
                    }
                    Tensor::from_vec(value.shape(), d)?
                } else {
                    mask
                };
                s = tape.mul_const(s, mask)?;
            }

            let post = spec.layer_kind(i) == LayerKind::Gattn || spec.stfn_placement == StfnPlacement::PostAggregate;
            if post {
                s = norm(&mut tape, s, &mut layer_stats)?;
            }
            let mut s_static = cur.is_static;

            if let Some(src) = spec.residual_source(i) {
                let block_in = inputs[src];
                let shortcut = match p(format!("layer{i}.proj")) {
                    Some(proj) => {
                        let reps = if block_in.is_static { t_len as u64 } else { 1 };
                        tape.spike_matmul(block_in.var, proj, &mut counters, reps)?
                    }
                    None => block_in.var,
                };
                let (a, b) = match (s_static, block_in.is_static) {
                    (true, false) => (tape.broadcast_time(s, t_len), shortcut),
                    (false, true) => (s, tape.broadcast_time(shortcut, t_len)),
                    _ => (s, shortcut),
                };
                s_static = s_static && block_in.is_static;
                s = tape.add(a, b)?;
            }

            let spikes = tape.if_unroll(s, s_static.then_some(t_len), spec.neuron.unroll())?;
            layer_spikes.push(spikes);
            stats_out.push(layer_stats);
            cur = Signal {
                var: spikes,
                is_static: false,
            };
        }

        let last_spikes = *layer_spikes.last().expect("spiking layer");
        let logits = match spec.coding {
            Coding::Rate => {
                let decoded = tape.mean_axis0(last_spikes)?;
                let pooled = match spec.readout {
                    Readout::Node => decoded,
                    Readout::Graph => tape.segment_mean(decoded, &g.offsets)?,
                };
                self.head(&mut tape, &p, pooled)?
            }
            Coding::Roc => {
                let w: Vec<f32> = (0..t_len)
                    .map(|t| spec.roc_logit_scale * spec.roc_r.powi(t as i32))
                    .collect();
                let l = tape.time_weighted_sum(last_spikes, &w)?;
                match spec.readout {
                    Readout::Node => l,
                    Readout::Graph => tape.segment_mean(l, &g.offsets)?,
                }
            }
        };

        Ok(Forward {
            tape,
            params,
            logits,
            layer_spikes,
            stfn_stats: stats_out,
            counters,
            t_len,
        })
    }

    fn head(&self, tape: &mut Tape, p: &dyn Fn(String) -> Option<Var>, x: Var) -> Result<Var> {
        let h = match (p("head.w1".into()), p("head.b1".into())) {
            (Some(w1), Some(b1)) => {
                let h = tape.matmul(x, w1)?;
                let h = tape.add_bias(h, b1)?;
                tape.relu(h)
            }
            _ => x,
        };
        let w2 = p("head.w2".into()).expect("layout");
        let b2 = p("head.b2".into()).expect("layout");
        let out = tape.matmul(h, w2)?;
        tape.add_bias(out, b2)
    }

    /// Folds the normalization statistics of a training pass into the
    /// running averages.
    pub fn update_running_stats(&mut self, fwd: &Forward) {
        for (r, s) in self.running.iter_mut().zip(&fwd.stfn_stats) {
            if let Some(s) = s {
                r.update(s);
            }
        }
    }
}

/// Node-level readout `A * relu(W h + b1) + b2` on decoded features.
pub fn readout_node(tape: &mut Tape, decoded: Var, w1: Var, b1: Var, w2: Var, b2: Var) -> Result<Var> {
    let h = tape.matmul(decoded, w1)?;
    let h = tape.add_bias(h, b1)?;
    let h = tape.relu(h);
    let out = tape.matmul(h, w2)?;
    tape.add_bias(out, b2)
}

/// Graph-level readout: mean over the nodes of each graph, then the node head.
pub fn readout_graph(
    tape: &mut Tape,
    decoded: Var,
    offsets: &[usize],
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
) -> Result<Var> {
    if offsets.windows(2).any(|w| w[1] <= w[0]) || offsets.len() < 2 {
        return Err(Error::EmptyGraph);
    }
    let pooled = tape.segment_mean(decoded, offsets)?;
    readout_node(tape, pooled, w1, b1, w2, b2)
}

/// Summed cross-entropy over the rows listed in `mask`.
pub fn loss_cross_entropy(tape: &mut Tape, logits: Var, labels: &[usize], mask: &[usize]) -> Result<Var> {
    tape.cross_entropy(logits, labels, mask)
}
