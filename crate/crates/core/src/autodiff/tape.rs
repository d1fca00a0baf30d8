use std::sync::Arc;

use rayon::prelude::*;

use super::kernels::{self, SparseRows};
use crate::error::{Error, Result};
use crate::graph::{CsrGraph, NormalizedAdjacency};
use crate::metrics::OpCounters;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Neuron constants used by the fused integrate-and-fire unroll.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnrollConfig {
    pub kappa: f32,
    pub v_th: f32,
    pub width: f32,
}

/// Options of the fused normalization op.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormConfig {
    /// `rho * v_th`: target standard deviation before the affine restore.
    pub scale: f32,
    pub eps: f32,
    /// Treat mean and variance as constants in the backward pass.
    pub detach_stats: bool,
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    SparseMatMul {
        x: Var,
        w: Var,
    },
    Aggregate {
        adj: Arc<NormalizedAdjacency>,
        x: Var,
    },
    AddBias {
        x: Var,
        b: Var,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    MulConst(Var, Tensor),
    Concat(Vec<Var>),
    LeakyRelu(Var, f32),
    Relu(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    SegmentMean {
        x: Var,
        offsets: Vec<usize>,
    },
    Sum(Var),
    TimeWeightedSum {
        x: Var,
        weights: Vec<f32>,
    },
    BroadcastTime {
        x: Var,
        t_len: usize,
    },
    Heaviside {
        x: Var,
        threshold: f32,
        width: f32,
    },
    IfUnroll {
        input: Var,
        static_input: bool,
        cfg: UnrollConfig,
        potentials: Tensor,
    },
    Stfn {
        s: Var,
        lambda: Var,
        gamma: Var,
        cfg: NormConfig,
        xhat: Tensor,
        inv_std: Vec<f32>,
    },
    Gat {
        z: Var,
        attn: Var,
        graph: Arc<CsrGraph>,
        heads: usize,
        slope: f32,
        alpha: Vec<f32>,
        pre: Vec<f32>,
    },
    HeadMean {
        x: Var,
        heads: usize,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        mask: Vec<usize>,
        probs: Vec<f32>,
    },
    Reshape(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Reverse-mode gradient tape.
///
/// Operations are evaluated eagerly and recorded in insertion order, which is
/// a valid topological order. One tape covers one forward pass including the
/// full temporal unroll.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients indexed by [`Var`]; entries exist only for values that require grad.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f32, f32) -> f32) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.shape(), data).expect("same shape")
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Membrane potentials `[T x N x C]` recorded by an [`if_unroll`](Self::if_unroll) output.
    pub fn potentials(&self, spikes: Var) -> Option<&Tensor> {
        match &self.nodes[spikes.0].op {
            Op::IfUnroll { potentials, .. } => Some(potentials),
            _ => None,
        }
    }

    /// Attention coefficients of a [`gat`](Self::gat) output, laid out
    /// `[block][edge][head]` following the graph's CSR edge order.
    pub fn attention(&self, out: Var) -> Option<&[f32]> {
        match &self.nodes[out.0].op {
            Op::Gat { alpha, .. } => Some(alpha),
            _ => None,
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.ndim() != 2 || bv.ndim() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", av.shape(), bv.shape()),
            ));
        }
        let (m, k, p) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let mut out = Tensor::zeros(&[m, p]);
        kernels::matmul(av.data(), bv.data(), m, k, p, out.data_mut());
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// Spike-driven product `x * w` computed as gather-adds over the nonzero
    /// (binary) entries of `x`. `x` may have any leading shape `[..., C]`.
    /// Each call adds `nnz * P` to the transform addition counter, times
    /// `repeats` (for inputs reused unchanged across several time steps).
    pub fn spike_matmul(
        &mut self,
        x: Var,
        w: Var,
        counters: &mut OpCounters,
        repeats: u64,
    ) -> Result<Var> {
        if let Some(v) = self.value(x).first_non_binary() {
            return Err(Error::NonBinaryInput {
                op: "spike_matmul",
                value: v,
            });
        }
        self.sparse_matmul(x, w, true, counters, repeats)
    }

    /// Like [`spike_matmul`](Self::spike_matmul) for real-valued sparse input
    /// (rank-order weighted spikes); each nonzero costs one multiply per output.
    pub fn weighted_spike_matmul(
        &mut self,
        x: Var,
        w: Var,
        counters: &mut OpCounters,
        repeats: u64,
    ) -> Result<Var> {
        self.sparse_matmul(x, w, false, counters, repeats)
    }

    fn sparse_matmul(
        &mut self,
        x: Var,
        w: Var,
        binary: bool,
        counters: &mut OpCounters,
        repeats: u64,
    ) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        if wv.ndim() != 2 || xv.cols() != wv.shape()[0] {
            return Err(Error::shape(
                "spike_matmul",
                format!("{:?} x {:?}", xv.shape(), wv.shape()),
            ));
        }
        let (rows, c, p) = (xv.rows(), xv.cols(), wv.shape()[1]);
        let sparse = SparseRows::from_dense(xv.data(), rows, c);
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = p;
        let mut out = Tensor::zeros(&shape);
        kernels::sparse_matmul(&sparse, wv.data(), p, binary, out.data_mut());
        let work = sparse.nnz() as u64 * p as u64 * repeats;
        counters.transform_adds += work;
        if !binary {
            counters.transform_muls += work;
        }
        let rg = self.rg(&[x, w]);
        Ok(self.push(out, Op::SparseMatMul { x, w }, rg))
    }

    /// Sparse neighborhood aggregation `A x`, applied to every `[N x C]` block
    /// of `x` (shape `[N, C]` or `[B, N, C]`).
    pub fn aggregate(
        &mut self,
        adj: &Arc<NormalizedAdjacency>,
        x: Var,
        counters: &mut OpCounters,
        repeats: u64,
    ) -> Result<Var> {
        let xv = self.value(x);
        let n = adj.num_nodes();
        let block_ok = match xv.ndim() {
            2 => xv.shape()[0] == n,
            3 => xv.shape()[1] == n,
            _ => false,
        };
        if !block_ok {
            return Err(Error::shape(
                "aggregate",
                format!("{:?} against {} nodes", xv.shape(), n),
            ));
        }
        let c = xv.cols();
        let mut out = Tensor::zeros(xv.shape());
        if n > 0 && c > 0 {
            for (src, dst) in xv
                .data()
                .chunks(n * c)
                .zip(out.data_mut().chunks_mut(n * c))
            {
                adj.spmm(src, c, dst);
            }
        }
        let blocks = (xv.rows() / n.max(1)) as u64;
        let work = adj.graph().nnz() as u64 * c as u64 * blocks * repeats;
        counters.aggregate_muls += work;
        counters.aggregate_adds += work;
        let rg = self.rg(&[x]);
        Ok(self.push(
            out,
            Op::Aggregate {
                adj: Arc::clone(adj),
                x,
            },
            rg,
        ))
    }

    /// Adds a `[C]` bias to every row of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        if bv.ndim() != 1 || bv.len() != xv.cols() {
            return Err(Error::shape(
                "add_bias",
                format!("{:?} + {:?}", xv.shape(), bv.shape()),
            ));
        }
        let mut out = xv.clone();
        let c = xv.cols();
        for row in out.data_mut().chunks_mut(c) {
            for (o, &bb) in row.iter_mut().zip(bv.data()) {
                *o += bb;
            }
        }
        let rg = self.rg(&[x, b]);
        Ok(self.push(out, Op::AddBias { x, b }, rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x + y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x - y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x * y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, s: f32) -> Var {
        let out = self.value(x).map(|v| v * s);
        let rg = self.rg(&[x]);
        self.push(out, Op::Scale(x, s), rg)
    }

    /// Elementwise product with a constant tensor (masks, fixed coefficients).
    pub fn mul_const(&mut self, x: Var, c: Tensor) -> Result<Var> {
        if self.value(x).shape() != c.shape() {
            return Err(Error::shape(
                "mul_const",
                format!("{:?} vs {:?}", self.value(x).shape(), c.shape()),
            ));
        }
        let out = zip_map(self.value(x), &c, |x, y| x * y);
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::MulConst(x, c), rg))
    }

    /// Concatenation along the last dimension.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let lead: Vec<usize> = {
            let s = self.value(*first).shape();
            s[..s.len() - 1].to_vec()
        };
        let rows = self.value(*first).rows();
        let mut total = 0;
        for &p in parts {
            let s = self.value(p).shape();
            if s.len() != lead.len() + 1 || s[..s.len() - 1] != lead[..] {
                return Err(Error::shape("concat", format!("{:?} vs lead {:?}", s, lead)));
            }
            total += self.value(p).cols();
        }
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let mut shape = lead;
        shape.push(total);
        let out = Tensor::from_vec(&shape, data)?;
        let rg = self.rg(parts);
        Ok(self.push(out, Op::Concat(parts.to_vec()), rg))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f32) -> Var {
        let out = self.value(x).map(|v| kernels::leaky_relu(v, slope));
        let rg = self.rg(&[x]);
        self.push(out, Op::LeakyRelu(x, slope), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        let rg = self.rg(&[x]);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut out = Tensor::zeros(xv.shape());
        let c = xv.cols();
        if c > 0 {
            for (src, dst) in xv.data().chunks(c).zip(out.data_mut().chunks_mut(c)) {
                kernels::softmax_row(src, dst);
            }
        }
        let rg = self.rg(&[x]);
        self.push(out, Op::SoftmaxRows(x), rg)
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut out = Tensor::zeros(xv.shape());
        let c = xv.cols();
        if c > 0 {
            for (src, dst) in xv.data().chunks(c).zip(out.data_mut().chunks_mut(c)) {
                kernels::log_softmax_row(src, dst);
            }
        }
        let rg = self.rg(&[x]);
        self.push(out, Op::LogSoftmaxRows(x), rg)
    }

    /// Mean over the leading axis: `[A, rest..] -> [rest..]`.
    pub fn mean_axis0(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.ndim() == 0 || xv.shape()[0] == 0 {
            return Err(Error::shape("mean_axis0", format!("{:?}", xv.shape())));
        }
        let a = xv.shape()[0];
        let weights = vec![1.0 / a as f32; a];
        self.time_weighted_sum(x, &weights)
    }

    /// `sum_t weights[t] * x[t]` over the leading axis.
    pub fn time_weighted_sum(&mut self, x: Var, weights: &[f32]) -> Result<Var> {
        let xv = self.value(x);
        if xv.ndim() == 0 || xv.shape()[0] != weights.len() {
            return Err(Error::shape(
                "time_weighted_sum",
                format!("{:?} with {} weights", xv.shape(), weights.len()),
            ));
        }
        let inner = &xv.shape()[1..];
        let block: usize = inner.iter().product();
        let mut out = Tensor::zeros(inner);
        for (t, &w) in weights.iter().enumerate() {
            let src = &xv.data()[t * block..(t + 1) * block];
            for (o, &s) in out.data_mut().iter_mut().zip(src) {
                *o += w * s;
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(
            out,
            Op::TimeWeightedSum {
                x,
                weights: weights.to_vec(),
            },
            rg,
        ))
    }

    /// `[rest..] -> [t_len, rest..]` by repetition.
    pub fn broadcast_time(&mut self, x: Var, t_len: usize) -> Var {
        let xv = self.value(x);
        let mut shape = vec![t_len];
        shape.extend_from_slice(xv.shape());
        let mut data = Vec::with_capacity(xv.len() * t_len);
        for _ in 0..t_len {
            data.extend_from_slice(xv.data());
        }
        let out = Tensor::from_vec(&shape, data).expect("shape");
        let rg = self.rg(&[x]);
        self.push(out, Op::BroadcastTime { x, t_len }, rg)
    }

    /// Mean over row segments: `[N, d]` with `offsets` (length G+1) -> `[G, d]`.
    pub fn segment_mean(&mut self, x: Var, offsets: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if xv.ndim() != 2 || offsets.first() != Some(&0) || offsets.last() != Some(&xv.rows()) {
            return Err(Error::shape(
                "segment_mean",
                format!("{:?} with offsets {:?}", xv.shape(), offsets),
            ));
        }
        let d = xv.cols();
        let g = offsets.len() - 1;
        let mut out = Tensor::zeros(&[g, d]);
        for s in 0..g {
            let (lo, hi) = (offsets[s], offsets[s + 1]);
            if hi <= lo {
                return Err(Error::EmptyGraph);
            }
            let mut acc = vec![0.0f64; d];
            for r in lo..hi {
                for (a, &v) in acc.iter_mut().zip(xv.row(r)) {
                    *a += v as f64;
                }
            }
            let cnt = (hi - lo) as f64;
            for (o, a) in out.row_mut(s).iter_mut().zip(acc) {
                *o = (a / cnt) as f32;
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(
            out,
            Op::SegmentMean {
                x,
                offsets: offsets.to_vec(),
            },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(&[x]);
        self.push(out, Op::Sum(x), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    /// Spike nonlinearity `1[x - threshold >= 0]` whose backward is the
    /// rectangular surrogate `(1/width) * 1[|x - threshold| < width/2]`.
    pub fn heaviside(&mut self, x: Var, threshold: f32, width: f32) -> Var {
        let out = self
            .value(x)
            .map(|v| if v - threshold >= 0.0 { 1.0 } else { 0.0 });
        let rg = self.rg(&[x]);
        self.push(
            out,
            Op::Heaviside {
                x,
                threshold,
                width,
            },
            rg,
        )
    }

    /// Integrate-and-fire dynamics over a whole time window.
    ///
    /// `input` holds the per-step currents `[T, N, C]`, or a time-invariant
    /// `[N, C]` current when `static_steps` is `Some(T)`. Each step computes
    /// `v = kappa * v * (1 - h) + I_t`, `h = 1[v - v_th >= 0]` from `v = h = 0`.
    /// The reset factor is a constant in the backward pass.
    pub fn if_unroll(
        &mut self,
        input: Var,
        static_steps: Option<usize>,
        cfg: UnrollConfig,
    ) -> Result<Var> {
        let iv = self.value(input);
        let (t_len, inner): (usize, Vec<usize>) = match static_steps {
            Some(t) => (t, iv.shape().to_vec()),
            None => {
                if iv.ndim() < 2 {
                    return Err(Error::shape("if_unroll", format!("{:?}", iv.shape())));
                }
                (iv.shape()[0], iv.shape()[1..].to_vec())
            }
        };
        let block: usize = inner.iter().product();
        let mut shape = vec![t_len];
        shape.extend_from_slice(&inner);
        let mut spikes = Tensor::zeros(&shape);
        let mut potentials = Tensor::zeros(&shape);
        let mut v = vec![0.0f32; block];
        let mut h = vec![0.0f32; block];
        for t in 0..t_len {
            let cur = if static_steps.is_some() {
                iv.data()
            } else {
                &iv.data()[t * block..(t + 1) * block]
            };
            for i in 0..block {
                v[i] = cfg.kappa * v[i] * (1.0 - h[i]) + cur[i];
                h[i] = if v[i] - cfg.v_th >= 0.0 { 1.0 } else { 0.0 };
            }
            potentials.data_mut()[t * block..(t + 1) * block].copy_from_slice(&v);
            spikes.data_mut()[t * block..(t + 1) * block].copy_from_slice(&h);
        }
        let rg = self.rg(&[input]);
        Ok(self.push(
            spikes,
            Op::IfUnroll {
                input,
                static_input: static_steps.is_some(),
                cfg,
                potentials,
            },
            rg,
        ))
    }

    /// Per-node standardization over all `[B x C]` entries of that node,
    /// rescaled by `cfg.scale` and restored by `lambda * x + gamma`.
    ///
    /// `s` is `[N, C]` or `[B, N, C]`; `lambda`/`gamma` are `[C]` (shared
    /// across nodes) or `[N, C]` (per node).
    pub fn stfn(&mut self, s: Var, lambda: Var, gamma: Var, cfg: NormConfig) -> Result<Var> {
        let sv = self.value(s);
        let (b, n, c) = match sv.shape() {
            [n, c] => (1, *n, *c),
            [b, n, c] => (*b, *n, *c),
            other => return Err(Error::shape("stfn", format!("{other:?}"))),
        };
        let (lv, gv) = (self.value(lambda), self.value(gamma));
        let per_node = lv.ndim() == 2;
        let affine_ok = if per_node {
            lv.shape() == [n, c]
        } else {
            lv.shape() == [c]
        };
        if !affine_ok || lv.shape() != gv.shape() {
            return Err(Error::shape(
                "stfn",
                format!("affine {:?}/{:?} for input {:?}", lv.shape(), gv.shape(), sv.shape()),
            ));
        }
        let m = (b * c) as f64;
        let stats: Vec<(f32, f32)> = (0..n)
            .into_par_iter()
            .map(|v| {
                let mut sum = 0.0f64;
                for t in 0..b {
                    let base = (t * n + v) * c;
                    sum += sv.data()[base..base + c].iter().map(|&x| x as f64).sum::<f64>();
                }
                let mean = sum / m;
                let mut sq = 0.0f64;
                for t in 0..b {
                    let base = (t * n + v) * c;
                    sq += sv.data()[base..base + c]
                        .iter()
                        .map(|&x| (x as f64 - mean).powi(2))
                        .sum::<f64>();
                }
                let var = sq / m;
                (mean as f32, (1.0 / (var + cfg.eps as f64).sqrt()) as f32)
            })
            .collect();
        let mut xhat = Tensor::zeros(sv.shape());
        let mut out = Tensor::zeros(sv.shape());
        for t in 0..b {
            for (v, &(mean, inv)) in stats.iter().enumerate() {
                let base = (t * n + v) * c;
                for k in 0..c {
                    let xh = (sv.data()[base + k] - mean) * inv;
                    let a = if per_node { v * c + k } else { k };
                    xhat.data_mut()[base + k] = xh;
                    out.data_mut()[base + k] = lv.data()[a] * cfg.scale * xh + gv.data()[a];
                }
            }
        }
        let inv_std = stats.iter().map(|s| s.1).collect();
        let rg = self.rg(&[s, lambda, gamma]);
        Ok(self.push(
            out,
            Op::Stfn {
                s,
                lambda,
                gamma,
                cfg,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Graph attention aggregation with `heads` heads.
    ///
    /// `z` is `[N, H*F]` or `[B, N, H*F]`, `attn` is `[H, 2F]` holding the
    /// target-half then neighbor-half of each head's attention vector. For
    /// every node `i`, `alpha_ij = softmax_j leaky_relu(a_h . [z_i || z_j])`
    /// over the neighbors of `i` in `graph`, and the output is
    /// `sum_j alpha_ij z_j` per head (heads concatenated).
    pub fn gat(
        &mut self,
        z: Var,
        attn: Var,
        graph: &Arc<CsrGraph>,
        heads: usize,
        slope: f32,
        counters: &mut OpCounters,
    ) -> Result<Var> {
        let (zv, av) = (self.value(z), self.value(attn));
        let n = graph.num_nodes();
        let hf = zv.cols();
        let ok_nodes = match zv.ndim() {
            2 => zv.shape()[0] == n,
            3 => zv.shape()[1] == n,
            _ => false,
        };
        if heads == 0 || hf % heads != 0 || !ok_nodes {
            return Err(Error::shape(
                "gat",
                format!("{:?} with {heads} heads on {n} nodes", zv.shape()),
            ));
        }
        let f = hf / heads;
        if av.shape() != [heads, 2 * f] {
            return Err(Error::shape(
                "gat",
                format!("attention {:?}, expected [{heads}, {}]", av.shape(), 2 * f),
            ));
        }
        let blocks = zv.rows() / n.max(1);
        let nnz = graph.nnz();
        let mut alpha = vec![0.0f32; blocks * nnz * heads];
        let mut pre = vec![0.0f32; blocks * nnz * heads];
        let mut out = Tensor::zeros(zv.shape());
        for bk in 0..blocks {
            let zb = &zv.data()[bk * n * hf..(bk + 1) * n * hf];
            // per-node target and neighbor scores for every head
            let mut s_dst = vec![0.0f32; n * heads];
            let mut s_src = vec![0.0f32; n * heads];
            for i in 0..n {
                for h in 0..heads {
                    let zi = &zb[i * hf + h * f..i * hf + (h + 1) * f];
                    let a = av.row(h);
                    s_dst[i * heads + h] = zi.iter().zip(&a[..f]).map(|(x, y)| x * y).sum();
                    s_src[i * heads + h] = zi.iter().zip(&a[f..]).map(|(x, y)| x * y).sum();
                }
            }
            let ob = &mut out.data_mut()[bk * n * hf..(bk + 1) * n * hf];
            let mut acc = vec![0.0f64; f];
            for i in 0..n {
                let (lo, hi) = (graph.row_ptr()[i], graph.row_ptr()[i + 1]);
                for h in 0..heads {
                    let mut max = f32::NEG_INFINITY;
                    for e in lo..hi {
                        let j = graph.col_idx()[e];
                        let raw = s_dst[i * heads + h] + s_src[j * heads + h];
                        let idx = (bk * nnz + e) * heads + h;
                        pre[idx] = raw;
                        let act = kernels::leaky_relu(raw, slope);
                        alpha[idx] = act;
                        max = max.max(act);
                    }
                    let mut zsum = 0.0f64;
                    for e in lo..hi {
                        let idx = (bk * nnz + e) * heads + h;
                        zsum += ((alpha[idx] - max) as f64).exp();
                    }
                    acc.iter_mut().for_each(|a| *a = 0.0);
                    for e in lo..hi {
                        let idx = (bk * nnz + e) * heads + h;
                        let a = (((alpha[idx] - max) as f64).exp() / zsum) as f32;
                        alpha[idx] = a;
                        let src = graph.col_idx()[e] * hf + h * f;
                        for k in 0..f {
                            acc[k] += a as f64 * zb[src + k] as f64;
                        }
                    }
                    let dst = i * hf + h * f;
                    for k in 0..f {
                        ob[dst + k] = acc[k] as f32;
                    }
                }
            }
        }
        let work = (blocks * nnz * hf) as u64;
        counters.aggregate_muls += work;
        counters.aggregate_adds += work;
        let rg = self.rg(&[z, attn]);
        Ok(self.push(
            out,
            Op::Gat {
                z,
                attn,
                graph: Arc::clone(graph),
                heads,
                slope,
                alpha,
                pre,
            },
            rg,
        ))
    }

    /// Averages `heads` equal-width column groups: `[.., H*F] -> [.., F]`.
    pub fn head_mean(&mut self, x: Var, heads: usize) -> Result<Var> {
        let xv = self.value(x);
        if heads == 0 || xv.cols() % heads != 0 {
            return Err(Error::shape("head_mean", format!("{:?} / {heads}", xv.shape())));
        }
        let f = xv.cols() / heads;
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = f;
        let mut out = Tensor::zeros(&shape);
        let inv = 1.0 / heads as f32;
        for r in 0..xv.rows() {
            let src = xv.row(r);
            let dst = out.row_mut(r);
            for h in 0..heads {
                for k in 0..f {
                    dst[k] += inv * src[h * f + k];
                }
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::HeadMean { x, heads }, rg))
    }

    /// Summed cross-entropy `-sum_{l in mask} ln softmax(logits_l)[labels_l]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize], mask: &[usize]) -> Result<Var> {
        if mask.is_empty() {
            return Err(Error::EmptyMask);
        }
        let lv = self.value(logits);
        if lv.ndim() != 2 || labels.len() != lv.rows() {
            return Err(Error::shape(
                "cross_entropy",
                format!("logits {:?} with {} labels", lv.shape(), labels.len()),
            ));
        }
        let k = lv.cols();
        let mut probs = vec![0.0f32; mask.len() * k];
        let mut loss = 0.0f64;
        let mut logp = vec![0.0f32; k];
        for (m, &l) in mask.iter().enumerate() {
            if l >= lv.rows() || labels[l] >= k {
                return Err(Error::shape("cross_entropy", format!("row {l} / label out of range")));
            }
            kernels::log_softmax_row(lv.row(l), &mut logp);
            loss -= logp[labels[l]] as f64;
            for (p, &lp) in probs[m * k..(m + 1) * k].iter_mut().zip(&logp) {
                *p = lp.exp();
            }
        }
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss as f32),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                mask: mask.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {:?}", self.value(loss).shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let g = match &node.op {
                Op::Leaf => continue,
                _ => match grads[i].take() {
                    Some(g) => g,
                    None => continue,
                },
            };
            self.backward_node(node, &g, &mut grads)?;
        }
        Ok(Gradients { grads })
    }

    fn accum(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => {
                for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
            slot => *slot = Some(g),
        }
    }

    fn backward_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, p) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if self.requires_grad(*a) {
                    let mut da = Tensor::zeros(av.shape());
                    kernels::matmul_a_bt(g.data(), bv.data(), m, p, k, da.data_mut());
                    self.accum(grads, *a, da);
                }
                if self.requires_grad(*b) {
                    let mut db = Tensor::zeros(bv.shape());
                    kernels::matmul_at_b(av.data(), g.data(), m, k, p, db.data_mut());
                    self.accum(grads, *b, db);
                }
            }
            Op::SparseMatMul { x, w } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (rows, c, p) = (xv.rows(), xv.cols(), wv.shape()[1]);
                if self.requires_grad(*w) {
                    let sparse = SparseRows::from_dense(xv.data(), rows, c).transpose(c);
                    let mut dw = Tensor::zeros(wv.shape());
                    kernels::sparse_matmul_grad_w(&sparse, g.data(), p, dw.data_mut());
                    self.accum(grads, *w, dw);
                }
                if self.requires_grad(*x) {
                    let mut dx = Tensor::zeros(xv.shape());
                    kernels::matmul_a_bt(g.data(), wv.data(), rows, p, c, dx.data_mut());
                    self.accum(grads, *x, dx);
                }
            }
            Op::Aggregate { adj, x } => {
                let n = adj.num_nodes();
                let c = g.cols();
                let mut dx = Tensor::zeros(g.shape());
                if n > 0 && c > 0 {
                    for (src, dst) in g.data().chunks(n * c).zip(dx.data_mut().chunks_mut(n * c)) {
                        adj.spmm_transpose(src, c, dst);
                    }
                }
                self.accum(grads, *x, dx);
            }
            Op::AddBias { x, b } => {
                if self.requires_grad(*b) {
                    let c = g.cols();
                    let mut db = Tensor::zeros(&[c]);
                    for row in g.data().chunks(c) {
                        for (d, &v) in db.data_mut().iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    self.accum(grads, *b, db);
                }
                self.accum(grads, *x, g.clone());
            }
            Op::Add(a, b) => {
                self.accum(grads, *a, g.clone());
                self.accum(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accum(grads, *a, g.clone());
                self.accum(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                self.accum(grads, *a, zip_map(g, bv, |x, y| x * y));
                self.accum(grads, *b, zip_map(g, av, |x, y| x * y));
            }
            Op::Scale(x, s) => self.accum(grads, *x, g.map(|v| v * s)),
            Op::MulConst(x, c) => self.accum(grads, *x, zip_map(g, c, |x, y| x * y)),
            Op::Concat(parts) => {
                let rows = g.rows();
                let widths: Vec<usize> = parts.iter().map(|p| self.value(*p).cols()).collect();
                let mut offset = 0;
                for (p, &w) in parts.iter().zip(&widths) {
                    if self.requires_grad(*p) {
                        let mut d = Tensor::zeros(self.value(*p).shape());
                        for r in 0..rows {
                            d.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + w]);
                        }
                        self.accum(grads, *p, d);
                    }
                    offset += w;
                }
            }
            Op::LeakyRelu(x, slope) => {
                let xv = self.value(*x);
                self.accum(
                    grads,
                    *x,
                    zip_map(g, xv, |gv, v| if v >= 0.0 { gv } else { slope * gv }),
                );
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                self.accum(grads, *x, zip_map(g, xv, |gv, v| if v > 0.0 { gv } else { 0.0 }));
            }
            Op::SoftmaxRows(x) => {
                let y = &node.value;
                let c = y.cols();
                let mut dx = Tensor::zeros(y.shape());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: f32 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for k in 0..c {
                        dx.row_mut(r)[k] = yr[k] * (gr[k] - dot);
                    }
                }
                self.accum(grads, *x, dx);
            }
            Op::LogSoftmaxRows(x) => {
                let y = &node.value;
                let c = y.cols();
                let mut dx = Tensor::zeros(y.shape());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let gsum: f32 = gr.iter().sum();
                    for k in 0..c {
                        dx.row_mut(r)[k] = gr[k] - yr[k].exp() * gsum;
                    }
                }
                self.accum(grads, *x, dx);
            }
            Op::Reshape(x) => {
                let d = g.clone().reshape(self.value(*x).shape())?;
                self.accum(grads, *x, d);
            }
            Op::TimeWeightedSum { x, weights } => {
                let xv = self.value(*x);
                let block = g.len();
                let mut dx = Tensor::zeros(xv.shape());
                for (t, &w) in weights.iter().enumerate() {
                    for (d, &gv) in dx.data_mut()[t * block..(t + 1) * block]
                        .iter_mut()
                        .zip(g.data())
                    {
                        *d = w * gv;
                    }
                }
                self.accum(grads, *x, dx);
            }
            Op::BroadcastTime { x, t_len } => {
                let block = self.value(*x).len();
                let mut dx = Tensor::zeros(self.value(*x).shape());
                for t in 0..*t_len {
                    for (d, &gv) in dx
                        .data_mut()
                        .iter_mut()
                        .zip(&g.data()[t * block..(t + 1) * block])
                    {
                        *d += gv;
                    }
                }
                self.accum(grads, *x, dx);
            }
            Op::SegmentMean { x, offsets } => {
                let xv = self.value(*x);
                let mut dx = Tensor::zeros(xv.shape());
                for s in 0..offsets.len() - 1 {
                    let (lo, hi) = (offsets[s], offsets[s + 1]);
                    let inv = 1.0 / (hi - lo) as f32;
                    for r in lo..hi {
                        for (d, &gv) in dx.row_mut(r).iter_mut().zip(g.row(s)) {
                            *d = gv * inv;
                        }
                    }
                }
                self.accum(grads, *x, dx);
            }
            Op::Sum(x) => {
                let gv = g.data()[0];
                self.accum(grads, *x, Tensor::full(self.value(*x).shape(), gv));
            }
            Op::Heaviside {
                x,
                threshold,
                width,
            } => {
                let xv = self.value(*x);
                let (th, wd) = (*threshold, *width);
                self.accum(
                    grads,
                    *x,
                    zip_map(g, xv, |gv, v| gv * surrogate(v - th, wd)),
                );
            }
            Op::IfUnroll {
                input,
                static_input,
                cfg,
                potentials,
            } => {
                let t_len = potentials.shape()[0];
                let block = potentials.len() / t_len.max(1);
                let spikes = &node.value;
                let mut d_in = Tensor::zeros(self.value(*input).shape());
                let mut dv_next = vec![0.0f32; block];
                for t in (0..t_len).rev() {
                    let range = t * block..(t + 1) * block;
                    let v = &potentials.data()[range.clone()];
                    let h = &spikes.data()[range.clone()];
                    let gh = &g.data()[range.clone()];
                    for i in 0..block {
                        let dv = gh[i] * surrogate(v[i] - cfg.v_th, cfg.width)
                            + dv_next[i] * cfg.kappa * (1.0 - h[i]);
                        dv_next[i] = dv;
                    }
                    if *static_input {
                        for (d, &dv) in d_in.data_mut().iter_mut().zip(&dv_next) {
                            *d += dv;
                        }
                    } else {
                        d_in.data_mut()[range].copy_from_slice(&dv_next);
                    }
                }
                self.accum(grads, *input, d_in);
            }
            Op::Stfn {
                s,
                lambda,
                gamma,
                cfg,
                xhat,
                inv_std,
            } => self.stfn_backward(g, *s, *lambda, *gamma, cfg, xhat, inv_std, grads),
            Op::Gat {
                z,
                attn,
                graph,
                heads,
                slope,
                alpha,
                pre,
            } => {
                let (zv, av) = (self.value(*z), self.value(*attn));
                let n = graph.num_nodes();
                let hf = zv.cols();
                let f = hf / heads;
                let nnz = graph.nnz();
                let blocks = zv.rows() / n.max(1);
                let mut dz = Tensor::zeros(zv.shape());
                let mut da = Tensor::zeros(av.shape());
                for bk in 0..blocks {
                    let zb = &zv.data()[bk * n * hf..(bk + 1) * n * hf];
                    let gb = &g.data()[bk * n * hf..(bk + 1) * n * hf];
                    let dzb = &mut dz.data_mut()[bk * n * hf..(bk + 1) * n * hf];
                    for i in 0..n {
                        let (lo, hi) = (graph.row_ptr()[i], graph.row_ptr()[i + 1]);
                        for h in 0..*heads {
                            let gi = &gb[i * hf + h * f..i * hf + (h + 1) * f];
                            // d alpha_ij = g_i . z_j
                            let mut dalpha = Vec::with_capacity(hi - lo);
                            let mut weighted = 0.0f32;
                            for e in lo..hi {
                                let j = graph.col_idx()[e];
                                let zj = &zb[j * hf + h * f..j * hf + (h + 1) * f];
                                let d: f32 = gi.iter().zip(zj).map(|(a, b)| a * b).sum();
                                let a = alpha[(bk * nnz + e) * heads + h];
                                weighted += a * d;
                                dalpha.push(d);
                            }
                            for (off, e) in (lo..hi).enumerate() {
                                let j = graph.col_idx()[e];
                                let idx = (bk * nnz + e) * heads + h;
                                let a = alpha[idx];
                                // message path
                                for k in 0..f {
                                    dzb[j * hf + h * f + k] += a * gi[k];
                                }
                                let de = a * (dalpha[off] - weighted);
                                let dpre = if pre[idx] >= 0.0 { de } else { slope * de };
                                if dpre == 0.0 {
                                    continue;
                                }
                                let arow = av.row(h);
                                for k in 0..f {
                                    let zi_k = zb[i * hf + h * f + k];
                                    let zj_k = zb[j * hf + h * f + k];
                                    dzb[i * hf + h * f + k] += dpre * arow[k];
                                    dzb[j * hf + h * f + k] += dpre * arow[f + k];
                                    da.row_mut(h)[k] += dpre * zi_k;
                                    da.row_mut(h)[f + k] += dpre * zj_k;
                                }
                            }
                        }
                    }
                }
                self.accum(grads, *z, dz);
                self.accum(grads, *attn, da);
            }
            Op::HeadMean { x, heads } => {
                let xv = self.value(*x);
                let f = g.cols();
                let inv = 1.0 / *heads as f32;
                let mut dx = Tensor::zeros(xv.shape());
                for r in 0..g.rows() {
                    let gr = g.row(r).to_vec();
                    let dr = dx.row_mut(r);
                    for h in 0..*heads {
                        for k in 0..f {
                            dr[h * f + k] = inv * gr[k];
                        }
                    }
                }
                self.accum(grads, *x, dx);
            }
            Op::CrossEntropy {
                logits,
                labels,
                mask,
                probs,
            } => {
                let lv = self.value(*logits);
                let k = lv.cols();
                let scale = g.data()[0];
                let mut dl = Tensor::zeros(lv.shape());
                for (m, &l) in mask.iter().enumerate() {
                    let row = dl.row_mut(l);
                    for c in 0..k {
                        let onehot = if c == labels[l] { 1.0 } else { 0.0 };
                        row[c] += scale * (probs[m * k + c] - onehot);
                    }
                }
                self.accum(grads, *logits, dl);
            }
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn stfn_backward(
        &self,
        g: &Tensor,
        s: Var,
        lambda: Var,
        gamma: Var,
        cfg: &NormConfig,
        xhat: &Tensor,
        inv_std: &[f32],
        grads: &mut [Option<Tensor>],
    ) {
        let sv = self.value(s);
        let (b, n, c) = match sv.shape() {
            [n, c] => (1, *n, *c),
            [b, n, c] => (*b, *n, *c),
            _ => unreachable!(),
        };
        let lv = self.value(lambda);
        let per_node = lv.ndim() == 2;
        let aidx = |v: usize, k: usize| if per_node { v * c + k } else { k };

        let mut dl = Tensor::zeros(lv.shape());
        let mut dg = Tensor::zeros(lv.shape());
        for t in 0..b {
            for v in 0..n {
                let base = (t * n + v) * c;
                for k in 0..c {
                    let gv = g.data()[base + k];
                    dl.data_mut()[aidx(v, k)] += gv * cfg.scale * xhat.data()[base + k];
                    dg.data_mut()[aidx(v, k)] += gv;
                }
            }
        }

        if self.requires_grad(s) {
            let m = (b * c) as f32;
            let mut ds = Tensor::zeros(sv.shape());
            // dxhat = g * lambda * scale; ds = inv_std * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat))
            let per_node_terms: Vec<(f32, f32)> = (0..n)
                .map(|v| {
                    let (mut s1, mut s2) = (0.0f64, 0.0f64);
                    for t in 0..b {
                        let base = (t * n + v) * c;
                        for k in 0..c {
                            let d = g.data()[base + k] * lv.data()[aidx(v, k)] * cfg.scale;
                            s1 += d as f64;
                            s2 += (d * xhat.data()[base + k]) as f64;
                        }
                    }
                    ((s1 / m as f64) as f32, (s2 / m as f64) as f32)
                })
                .collect();
            for t in 0..b {
                for v in 0..n {
                    let base = (t * n + v) * c;
                    let (mean_d, mean_dx) = per_node_terms[v];
                    for k in 0..c {
                        let d = g.data()[base + k] * lv.data()[aidx(v, k)] * cfg.scale;
                        ds.data_mut()[base + k] = if cfg.detach_stats {
                            inv_std[v] * d
                        } else {
                            inv_std[v] * (d - mean_d - xhat.data()[base + k] * mean_dx)
                        };
                    }
                }
            }
            self.accum(grads, s, ds);
        }
        self.accum(grads, lambda, dl);
        self.accum(grads, gamma, dg);
    }
}

/// Rectangular surrogate derivative of the spike step at offset `u = V - V_th`.
pub fn surrogate(u: f32, width: f32) -> f32 {
    if u.abs() < width / 2.0 {
        1.0 / width
    } else {
        0.0
    }
}
