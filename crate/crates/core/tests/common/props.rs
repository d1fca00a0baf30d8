//! Invariant checks driven by generated graphs and tensors.

use proptest::prelude::*;
use proptest::test_runner::TestCaseError;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use spikegraph::autodiff::{NormConfig, Tape};
use spikegraph::data::{read_feature_blob, write_feature_blob};
use spikegraph::graph::{build_csr, permute, sym_normalize, CsrGraph};
use spikegraph::metrics::OpCounters;
use spikegraph::model::{Coding, Model, ModelSpec, PreparedGraph};
use spikegraph::spiking::{self, EncodeMode, NeuronConfig};
use spikegraph::stfn::{stfn_apply, stfn_stats, StfnParams};
use spikegraph::Tensor;

pub const FEATURES: usize = 4;
pub const CLASSES: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Gc,
    Ga,
    Residual,
    Roc,
}

pub const VARIANTS: [Variant; 4] = [Variant::Gc, Variant::Ga, Variant::Residual, Variant::Roc];

pub fn spec(variant: Variant) -> ModelSpec {
    let base = ModelSpec {
        layer_widths: vec![8, 6],
        head_hidden: 5,
        dropout: 0.0,
        t_len: 4,
        ..ModelSpec::gc_snn(FEATURES, CLASSES)
    };
    match variant {
        Variant::Gc => base,
        Variant::Ga => ModelSpec {
            layer_widths: vec![8],
            heads: 2,
            head_hidden: 5,
            dropout: 0.0,
            t_len: 4,
            ..ModelSpec::ga_snn(FEATURES, CLASSES)
        },
        Variant::Residual => ModelSpec {
            residual: true,
            dropout: 0.0,
            t_len: 4,
            ..ModelSpec::deep_gc_snn(FEATURES, CLASSES, 4, 6, 6)
        },
        Variant::Roc => ModelSpec {
            coding: Coding::Roc,
            ..base
        },
    }
}

#[derive(Clone, Debug)]
pub struct GraphCase {
    pub n: usize,
    pub edges: Vec<(usize, usize)>,
    pub features: Vec<f32>,
    pub perm: Vec<usize>,
    pub seed: u64,
}

impl GraphCase {
    pub fn graph(&self) -> CsrGraph {
        build_csr(&self.edges, self.n, true).expect("valid edges")
    }

    pub fn x(&self) -> Tensor {
        Tensor::from_vec(&[self.n, FEATURES], self.features.clone()).expect("feature shape")
    }
}

pub fn graph_case() -> impl Strategy<Value = GraphCase> {
    (2usize..12).prop_flat_map(|n| {
        (
            prop::collection::vec((0..n, 0..n), 0..=3 * n),
            prop::collection::vec(prop::bool::ANY, n * FEATURES),
            Just((0..n).collect::<Vec<usize>>()).prop_shuffle(),
            any::<u64>(),
        )
            .prop_map(move |(edges, bits, perm, seed)| GraphCase {
                n,
                edges: edges.into_iter().filter(|(u, v)| u != v).collect(),
                features: bits.into_iter().map(|b| b as u8 as f32).collect(),
                perm,
                seed,
            })
    })
}

fn fail(msg: String) -> TestCaseError {
    TestCaseError::fail(msg)
}

fn ok<T, E: std::fmt::Display>(r: std::result::Result<T, E>) -> Result<T, TestCaseError> {
    r.map_err(|e| fail(e.to_string()))
}

/// Relabeling the nodes relabels every spike train and logit the same way.
pub fn permutation_equivariance(case: &GraphCase, variant: Variant) -> Result<(), TestCaseError> {
    let g = case.graph();
    let x = case.x();
    let gp = ok(permute(&g, &case.perm))?;
    let mut xp = Tensor::zeros(x.shape());
    for i in 0..case.n {
        xp.row_mut(case.perm[i]).copy_from_slice(x.row(i));
    }
    let model = ok(Model::new(spec(variant), &mut ChaCha8Rng::seed_from_u64(case.seed)))?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = ok(model.forward(&ok(PreparedGraph::new(&g, x, true))?, false, &mut rng))?;
    let b = ok(model.forward(&ok(PreparedGraph::new(&gp, xp, true))?, false, &mut rng))?;
    for (&sa, &sb) in a.layer_spikes.iter().zip(&b.layer_spikes) {
        let (ta, tb) = (a.tape.value(sa), b.tape.value(sb));
        let (t_len, c) = (ta.shape()[0], ta.shape()[2]);
        for t in 0..t_len {
            for i in 0..case.n {
                for k in 0..c {
                    let (u, v) = (ta.at(&[t, i, k]), tb.at(&[t, case.perm[i], k]));
                    if u != v {
                        return Err(fail(format!("spike differs at t={t} node={i} ch={k}")));
                    }
                }
            }
        }
    }
    let (la, lb) = (a.logits(), b.logits());
    for i in 0..case.n {
        for k in 0..CLASSES {
            let (u, v) = (la.at(&[i, k]), lb.at(&[case.perm[i], k]));
            if (u - v).abs() > 1e-5 * u.abs().max(1.0) {
                return Err(fail(format!("logit {u} vs {v} at node {i} class {k}")));
            }
        }
    }
    let (pa, sa) = a.predictions(&model.spec);
    let (pb, sb) = b.predictions(&model.spec);
    for i in 0..case.n {
        let j = case.perm[i];
        if pa[i] != pb[j] || sa[i] != sb[j] {
            return Err(fail(format!("decision differs at node {i}")));
        }
    }
    Ok(())
}

/// Every spiking layer emits only 0 or 1, in training mode with stochastic
/// input encoding and dropout.
pub fn spikes_are_binary(case: &GraphCase, variant: Variant) -> Result<(), TestCaseError> {
    let spec = ModelSpec {
        dropout: 0.3,
        encode: EncodeMode::Bernoulli,
        ..spec(variant)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(case.seed);
    let model = ok(Model::new(spec, &mut rng))?;
    let fwd = ok(model.forward(&ok(PreparedGraph::new(&case.graph(), case.x(), true))?, true, &mut rng))?;
    if fwd.layer_spikes.len() != model.spec.num_spiking_layers() {
        return Err(fail("missing spiking layer".into()));
    }
    for &s in &fwd.layer_spikes {
        let v = fwd.tape.value(s);
        if !v.is_binary() || v.shape()[0] != model.spec.t_len {
            return Err(fail(format!("non-binary or mis-shaped spikes {:?}", v.shape())));
        }
    }
    if !fwd.logits().data().iter().all(|v| v.is_finite()) {
        return Err(fail("non-finite logits".into()));
    }
    Ok(())
}

/// Attention coefficients over each neighborhood are non-negative and sum to one.
pub fn attention_rows_normalized(case: &GraphCase, heads: usize) -> Result<(), TestCaseError> {
    let adj = ok(sym_normalize(&case.graph(), true))?;
    let structure = std::sync::Arc::new(adj.graph().clone());
    let f = 3;
    let mut rng = ChaCha8Rng::seed_from_u64(case.seed);
    let z = Tensor::uniform(&[case.n, heads * f], -3.0, 3.0, &mut rng);
    let a = Tensor::uniform(&[heads, 2 * f], -3.0, 3.0, &mut rng);
    let mut tape = Tape::new();
    let zv = tape.constant(z);
    let av = tape.constant(a);
    let out = ok(tape.gat(zv, av, &structure, heads, 0.2, &mut OpCounters::default()))?;
    let alpha = tape.attention(out).ok_or_else(|| fail("no attention recorded".into()))?;
    let rp = structure.row_ptr();
    for v in 0..case.n {
        for h in 0..heads {
            let mut sum = 0.0f64;
            for e in rp[v]..rp[v + 1] {
                let w = alpha[e * heads + h];
                if w < 0.0 {
                    return Err(fail(format!("negative coefficient {w}")));
                }
                sum += w as f64;
            }
            if (sum - 1.0).abs() > 1e-5 {
                return Err(fail(format!("row {v} head {h} sums to {sum}")));
            }
        }
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct SpikeBlock {
    pub t: usize,
    pub n: usize,
    pub c: usize,
    pub data: Vec<f32>,
}

impl SpikeBlock {
    pub fn tensor(&self) -> Tensor {
        Tensor::from_vec(&[self.t, self.n, self.c], self.data.clone()).expect("block shape")
    }
}

/// Real-valued `[T, N, C]` blocks with a per-node offset and spread, so
/// node statistics differ.
pub fn spike_block() -> impl Strategy<Value = SpikeBlock> {
    (1usize..6, 1usize..6, 1usize..9).prop_flat_map(|(t, n, c)| {
        (
            prop::collection::vec(-1.0f32..1.0, t * n * c),
            prop::collection::vec((-10.0f32..10.0, 0.01f32..10.0), n),
        )
            .prop_map(move |(raw, node)| {
                let mut data = raw;
                for ti in 0..t {
                    for v in 0..n {
                        for k in 0..c {
                            let i = (ti * n + v) * c + k;
                            data[i] = node[v].0 + node[v].1 * data[i];
                        }
                    }
                }
                SpikeBlock { t, n, c, data }
            })
    })
}

/// With unit scale and zero shift, each node's normalized entries average to zero.
pub fn normalization_zero_mean(block: &SpikeBlock) -> Result<(), TestCaseError> {
    let s = block.tensor();
    let stats = ok(stfn_stats(&s))?;
    let y = ok(stfn_apply(&s, &stats, &StfnParams::new(block.c), 0.25))?;
    let mut tape = Tape::new();
    let sv = tape.constant(s);
    let l = tape.constant(Tensor::ones(&[block.c]));
    let g = tape.constant(Tensor::zeros(&[block.c]));
    let cfg = NormConfig {
        scale: 0.25,
        eps: 1e-5,
        detach_stats: false,
    };
    let yt = ok(tape.stfn(sv, l, g, cfg))?;
    let yt = tape.value(yt).clone();
    for out in [&y, &yt] {
        for v in 0..block.n {
            let mut sum = 0.0f64;
            for t in 0..block.t {
                for k in 0..block.c {
                    sum += out.at(&[t, v, k]) as f64;
                }
            }
            let mean = sum / (block.t * block.c) as f64;
            if mean.abs() > 1e-5 {
                return Err(fail(format!("node {v} mean {mean:e}")));
            }
        }
    }
    Ok(())
}

/// Two runs from the same seed agree bit for bit in spikes, logits and gradients.
pub fn seeded_runs_are_bitwise_equal(case: &GraphCase, variant: Variant) -> Result<(), TestCaseError> {
    let spec = ModelSpec {
        dropout: 0.2,
        encode: EncodeMode::Bernoulli,
        ..spec(variant)
    };
    let g = ok(PreparedGraph::new(&case.graph(), case.x(), true))?;
    let run = || -> Result<(Vec<u32>, Vec<u32>), TestCaseError> {
        let mut rng = ChaCha8Rng::seed_from_u64(case.seed);
        let model = ok(Model::new(spec.clone(), &mut rng))?;
        let mut fwd = ok(model.forward(&g, true, &mut rng))?;
        let mask: Vec<usize> = (0..case.n).collect();
        let labels: Vec<usize> = (0..case.n).map(|i| i % CLASSES).collect();
        let logits = fwd.logits;
        let loss = ok(fwd.tape.cross_entropy(logits, &labels, &mask))?;
        let grads = ok(fwd.tape.backward(loss))?;
        let mut values: Vec<u32> = fwd.logits().data().iter().map(|v| v.to_bits()).collect();
        for &s in &fwd.layer_spikes {
            values.extend(fwd.tape.value(s).data().iter().map(|v| v.to_bits()));
        }
        let mut gbits = Vec::new();
        for &p in &fwd.params {
            if let Some(t) = grads.get(p) {
                gbits.extend(t.data().iter().map(|v| v.to_bits()));
            }
        }
        Ok((values, gbits))
    };
    let (a, b) = (run()?, run()?);
    if a != b {
        return Err(fail("seeded runs differ".into()));
    }
    Ok(())
}

/// `weight(u, v) = weight(v, u) = 1 / sqrt(d_u d_v)` with self-loop-augmented degrees.
pub fn symmetric_normalization(case: &GraphCase) -> Result<(), TestCaseError> {
    let g = case.graph();
    let adj = ok(sym_normalize(&g, true))?;
    let ag = adj.graph();
    if !ag.is_symmetric() || ag.nnz() != g.nnz() + case.n {
        return Err(fail("normalized pattern is not symmetric A + I".into()));
    }
    for u in 0..case.n {
        for &v in ag.neighbors(u) {
            let (du, dv) = ((g.degree(u) + 1) as f64, (g.degree(v) + 1) as f64);
            let expect = 1.0 / (du * dv).sqrt();
            let (w, wt) = (adj.weight(u, v).unwrap_or(f32::NAN), adj.weight(v, u).unwrap_or(f32::NAN));
            if w != wt || (w as f64 - expect).abs() > 1e-6 {
                return Err(fail(format!("weight({u},{v}) = {w}, transposed {wt}, expected {expect}")));
            }
        }
    }
    Ok(())
}

/// Binary feature blobs reproduce the written tensor bit for bit.
pub fn feature_blob_round_trip(rows: usize, cols: usize, data: &[f32]) -> Result<(), TestCaseError> {
    let t = ok(Tensor::from_vec(&[rows, cols], data.to_vec()))?;
    let dir = ok(tempfile::tempdir())?;
    let path = dir.path().join("features.bin");
    ok(write_feature_blob(&path, &t))?;
    let back = ok(read_feature_blob(&path))?;
    let same = back.shape() == t.shape()
        && back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits());
    if !same {
        return Err(fail("blob round trip changed the tensor".into()));
    }
    Ok(())
}

pub fn blob_case() -> impl Strategy<Value = (usize, usize, Vec<f32>)> {
    (1usize..20, 1usize..20).prop_flat_map(|(r, c)| {
        (Just(r), Just(c), prop::collection::vec(prop::num::f32::ANY, r * c))
    })
}

/// The fused spiking unroll agrees with the step-by-step neuron update.
pub fn unroll_matches_stepwise(block: &SpikeBlock, kappa: f32) -> Result<(), TestCaseError> {
    let currents = block.tensor().map(|v| v * 0.05);
    let cfg = NeuronConfig {
        kappa,
        ..NeuronConfig::default()
    };
    let (spikes, pots) = ok(spiking::simulate(&currents, &cfg))?;
    let mut tape = Tape::new();
    let iv = tape.constant(currents);
    let s = ok(tape.if_unroll(iv, None, cfg.unroll()))?;
    let same_spikes = tape.value(s).data() == spikes.data();
    let same_pots = tape.potentials(s).map(|p| p.data() == pots.data()).unwrap_or(false);
    if !(same_spikes && same_pots && spikes.is_binary()) {
        return Err(fail("fused and stepwise unrolls differ".into()));
    }
    Ok(())
}
