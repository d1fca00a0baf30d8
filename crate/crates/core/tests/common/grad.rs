//! Finite-difference checks of every differentiable kernel, and an
//! independent scalar BPTT oracle for the spiking unroll.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use spikegraph::autodiff::{fd_check, surrogate, NormConfig, Tape, UnrollConfig, Var};
use spikegraph::graph::{build_csr, sym_normalize};
use spikegraph::metrics::OpCounters;
use spikegraph::model::{readout_graph, readout_node};
use spikegraph::{Result, Tensor};

pub const TOL: f64 = 1e-3;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rand_t(shape: &[usize], seed: u64) -> Tensor {
    Tensor::uniform(shape, -1.0, 1.0, &mut rng(seed))
}

/// Scalar probe `sum(out * r)` with fixed random `r`, so every output entry
/// contributes a distinct weight.
fn probe(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let r = rand_t(tape.value(out).shape(), seed);
    let y = tape.mul_const(out, r)?;
    Ok(tape.sum(y))
}

/// Relative finite-difference errors of every kernel, by name.
pub type Errors = Vec<(&'static str, f64)>;

fn check<F>(out: &mut Errors, name: &'static str, x: &Tensor, step: f32, f: F)
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let err = fd_check(f, x, step).unwrap_or(f64::INFINITY);
    out.push((name, err));
}

fn ring(n: usize) -> spikegraph::graph::CsrGraph {
    let mut edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
    edges.push((0, n / 2));
    build_csr(&edges, n, true).unwrap()
}

fn matmul_both_operands(out: &mut Errors) {
    let a = rand_t(&[3, 4], 1);
    let b = rand_t(&[4, 2], 2);
    check(out, "matmul lhs", &a, 1e-2, |t, x| {
        let bv = t.constant(b.clone());
        let y = t.matmul(x, bv)?;
        probe(t, y, 9)
    });
    check(out, "matmul rhs", &b, 1e-2, |t, x| {
        let av = t.constant(a.clone());
        let y = t.matmul(av, x)?;
        probe(t, y, 9)
    });
}

fn spike_matmul_weights(out: &mut Errors) {
    let mut s = Tensor::zeros(&[2, 3, 4]);
    for (i, v) in s.data_mut().iter_mut().enumerate() {
        *v = ((i * 7 + 3) % 3 == 0) as u8 as f32;
    }
    let w = rand_t(&[4, 5], 3);
    check(out, "spike_matmul", &w, 1e-2, |t, x| {
        let sv = t.constant(s.clone());
        let y = t.spike_matmul(sv, x, &mut OpCounters::default(), 1)?;
        probe(t, y, 4)
    });
    let weighted = s.map(|v| v * 0.25);
    check(out, "weighted_spike_matmul input", &weighted, 1e-2, |t, x| {
        let wv = t.constant(w.clone());
        let y = t.weighted_spike_matmul(x, wv, &mut OpCounters::default(), 1)?;
        probe(t, y, 4)
    });
}

fn aggregate_two_and_three_dims(out: &mut Errors) {
    let adj = Arc::new(sym_normalize(&ring(6), true).unwrap());
    for shape in [vec![6, 3], vec![2, 6, 3]] {
        let x = rand_t(&shape, 5);
        check(out, "aggregate", &x, 1e-2, |t, v| {
            let y = t.aggregate(&adj, v, &mut OpCounters::default(), 1)?;
            probe(t, y, 6)
        });
    }
}

fn elementwise_and_shape_ops(out: &mut Errors) {
    let x = rand_t(&[3, 4], 7);
    let other = rand_t(&[3, 4], 8);
    let bias = rand_t(&[4], 10);
    check(out, "add_bias input", &x, 1e-2, |t, v| {
        let b = t.constant(bias.clone());
        let y = t.add_bias(v, b)?;
        probe(t, y, 1)
    });
    check(out, "add_bias bias", &bias, 1e-2, |t, b| {
        let xv = t.constant(x.clone());
        let y = t.add_bias(xv, b)?;
        probe(t, y, 1)
    });
    check(out, "mul", &x, 1e-2, |t, v| {
        let o = t.constant(other.clone());
        let y = t.mul(v, o)?;
        let z = t.mul(y, v)?;
        probe(t, z, 2)
    });
    check(out, "sub and scale", &x, 1e-2, |t, v| {
        let o = t.constant(other.clone());
        let y = t.sub(o, v)?;
        let y = t.scale(y, -1.5);
        let z = t.add(y, v)?;
        probe(t, z, 3)
    });
    check(out, "concat", &x, 1e-2, |t, v| {
        let o = t.constant(other.clone());
        let y = t.concat(&[v, o, v])?;
        probe(t, y, 4)
    });
    check(out, "reshape", &x, 1e-2, |t, v| {
        let y = t.reshape(v, &[2, 6])?;
        probe(t, y, 5)
    });
    let x3 = rand_t(&[4, 3, 2], 11);
    check(out, "mean_axis0", &x3, 1e-2, |t, v| {
        let y = t.mean_axis0(v)?;
        probe(t, y, 6)
    });
    check(out, "time_weighted_sum", &x3, 1e-2, |t, v| {
        let y = t.time_weighted_sum(v, &[4.0, 2.0, 1.0, 0.5])?;
        probe(t, y, 7)
    });
    check(out, "broadcast_time", &x, 1e-2, |t, v| {
        let y = t.broadcast_time(v, 3);
        probe(t, y, 8)
    });
    let rows = rand_t(&[7, 3], 12);
    check(out, "segment_mean", &rows, 1e-2, |t, v| {
        let y = t.segment_mean(v, &[0, 2, 3, 7])?;
        probe(t, y, 9)
    });
}

/// Inputs kept at least `margin` away from zero so the kinks of the
/// piecewise-linear activations sit outside every difference stencil.
fn off_kink(shape: &[usize], seed: u64, margin: f32) -> Tensor {
    rand_t(shape, seed).map(|v| if v.abs() < margin { v.signum() * margin + v } else { v })
}

fn activations(out: &mut Errors) {
    let x = off_kink(&[4, 5], 13, 0.05);
    check(out, "leaky_relu", &x, 1e-2, |t, v| {
        let y = t.leaky_relu(v, 0.2);
        probe(t, y, 1)
    });
    check(out, "relu", &x, 1e-2, |t, v| {
        let y = t.relu(v);
        probe(t, y, 2)
    });
    let z = rand_t(&[3, 6], 14).map(|v| 2.0 * v);
    check(out, "softmax_rows", &z, 1e-2, |t, v| {
        let y = t.softmax_rows(v);
        probe(t, y, 3)
    });
    check(out, "log_softmax_rows", &z, 1e-2, |t, v| {
        let y = t.log_softmax_rows(v);
        probe(t, y, 4)
    });
}

fn norm(detach: bool) -> NormConfig {
    NormConfig {
        scale: 0.25,
        eps: 1e-5,
        detach_stats: detach,
    }
}

fn stfn_input_and_affine(out: &mut Errors) {
    let s = rand_t(&[3, 4, 5], 15).map(|v| 2.0 * v + 0.3);
    let lambda = rand_t(&[5], 16).map(|v| 1.0 + 0.5 * v);
    let gamma = rand_t(&[5], 17).map(|v| 0.1 * v);
    check(out, "stfn input", &s, 5e-3, |t, v| {
        let l = t.constant(lambda.clone());
        let g = t.constant(gamma.clone());
        let y = t.stfn(v, l, g, norm(false))?;
        probe(t, y, 1)
    });
    check(out, "stfn lambda", &lambda, 1e-2, |t, l| {
        let sv = t.constant(s.clone());
        let g = t.constant(gamma.clone());
        let y = t.stfn(sv, l, g, norm(false))?;
        probe(t, y, 1)
    });
    check(out, "stfn gamma", &gamma, 1e-2, |t, g| {
        let sv = t.constant(s.clone());
        let l = t.constant(lambda.clone());
        let y = t.stfn(sv, l, g, norm(false))?;
        probe(t, y, 1)
    });
    let flat = rand_t(&[4, 5], 18).map(|v| 3.0 * v);
    let per_l = rand_t(&[4, 5], 19).map(|v| 1.0 + 0.3 * v);
    let per_g = rand_t(&[4, 5], 20).map(|v| 0.1 * v);
    check(out, "stfn per-node 2-d", &flat, 5e-3, |t, v| {
        let l = t.constant(per_l.clone());
        let g = t.constant(per_g.clone());
        let y = t.stfn(v, l, g, norm(false))?;
        probe(t, y, 2)
    });
    check(out, "stfn per-node lambda", &per_l, 1e-2, |t, l| {
        let sv = t.constant(flat.clone());
        let g = t.constant(per_g.clone());
        let y = t.stfn(sv, l, g, norm(false))?;
        probe(t, y, 2)
    });
}

/// Worst relative gap between detached-statistics gradients and the
/// closed-form frozen-statistics gradient.
pub fn stfn_detached_gap() -> f64 {
    let mut worst = 0.0f64;
    // with detached statistics the map is affine in the input, so the
    // gradient is lambda * scale * inv_std times the upstream gradient
    let s = rand_t(&[2, 3, 4], 21).map(|v| v + 0.5);
    let lambda = rand_t(&[4], 22).map(|v| 1.0 + 0.5 * v);
    let gamma = Tensor::zeros(&[4]);
    let r = rand_t(&[2, 3, 4], 23);
    let mut tape = Tape::new();
    let sv = tape.param(s.clone());
    let l = tape.constant(lambda.clone());
    let g = tape.constant(gamma);
    let y = tape.stfn(sv, l, g, norm(true)).unwrap();
    let y = tape.mul_const(y, r.clone()).unwrap();
    let loss = tape.sum(y);
    let grad = tape.backward(loss).unwrap().get(sv).unwrap().clone();
    for v in 0..3 {
        let vals: Vec<f64> = (0..2)
            .flat_map(|t| (0..4).map(move |k| (t, k)))
            .map(|(t, k)| s.at(&[t, v, k]) as f64)
            .collect();
        let mean = vals.iter().sum::<f64>() / 8.0;
        let var = vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 8.0;
        let inv = 1.0 / (var + 1e-5).sqrt();
        for t in 0..2 {
            for k in 0..4 {
                let expect = r.at(&[t, v, k]) as f64 * lambda.data()[k] as f64 * 0.25 * inv;
                let got = grad.at(&[t, v, k]) as f64;
                worst = worst.max((got - expect).abs() / expect.abs().max(1.0));
            }
        }
    }
    worst
}

fn attention_features_and_vector(out: &mut Errors) {
    let g = Arc::new(sym_normalize(&ring(5), true).unwrap().graph().clone());
    let z = rand_t(&[5, 6], 24);
    let a = rand_t(&[2, 6], 25);
    check(out, "gat features", &z, 5e-3, |t, v| {
        let av = t.constant(a.clone());
        let y = t.gat(v, av, &g, 2, 0.2, &mut OpCounters::default())?;
        probe(t, y, 1)
    });
    check(out, "gat attention", &a, 5e-3, |t, v| {
        let zv = t.constant(z.clone());
        let y = t.gat(zv, v, &g, 2, 0.2, &mut OpCounters::default())?;
        probe(t, y, 1)
    });
    let z3 = rand_t(&[2, 5, 6], 26);
    let a3 = rand_t(&[3, 4], 34);
    check(out, "gat time-stacked", &z3, 5e-3, |t, v| {
        let av = t.constant(a3.clone());
        let y = t.gat(v, av, &g, 3, 0.2, &mut OpCounters::default())?;
        let y = t.head_mean(y, 3)?;
        probe(t, y, 2)
    });
}

fn readouts_and_loss(out: &mut Errors) {
    let h = rand_t(&[6, 4], 27).map(|v| v.abs());
    let w1 = off_kink(&[4, 3], 28, 0.05);
    let b1 = rand_t(&[3], 29);
    let w2 = rand_t(&[3, 2], 30);
    let b2 = rand_t(&[2], 31);
    let labels = [0, 1, 1, 0, 1, 0];
    let mask = [0, 2, 3, 5];
    let consts = |t: &mut Tape| {
        (
            t.constant(w1.clone()),
            t.constant(b1.clone()),
            t.constant(w2.clone()),
            t.constant(b2.clone()),
        )
    };
    check(out, "readout_node", &h, 5e-3, |t, v| {
        let (a, b, c, d) = consts(t);
        let y = readout_node(t, v, a, b, c, d)?;
        t.cross_entropy(y, &labels, &mask)
    });
    check(out, "readout_node second layer", &w2, 5e-3, |t, v| {
        let hv = t.constant(h.clone());
        let (a, b, _, d) = consts(t);
        let y = readout_node(t, hv, a, b, v, d)?;
        t.cross_entropy(y, &labels, &mask)
    });
    check(out, "readout_graph", &h, 5e-3, |t, v| {
        let (a, b, c, d) = consts(t);
        let y = readout_graph(t, v, &[0, 2, 6], a, b, c, d)?;
        t.cross_entropy(y, &[1, 0], &[0, 1])
    });
    let logits = rand_t(&[6, 3], 32).map(|v| 3.0 * v);
    check(out, "cross_entropy", &logits, 1e-2, |t, v| t.cross_entropy(v, &[2, 0, 1, 1, 0, 2], &[0, 1, 4, 5]));
}

/// Scalar BPTT for one neuron: `v_t = kappa v_{t-1} (1 - h_{t-1}) + I_t`,
/// spikes through the rectangular surrogate, reset factor held constant.
fn neuron_oracle(currents: &[f32], coef: &[f32], cfg: UnrollConfig) -> Vec<f32> {
    let t_len = currents.len();
    let (mut v, mut h) = (vec![0f32; t_len], vec![0f32; t_len]);
    let (mut pv, mut ph) = (0f32, 0f32);
    for t in 0..t_len {
        v[t] = cfg.kappa * pv * (1.0 - ph) + currents[t];
        h[t] = if v[t] - cfg.v_th >= 0.0 { 1.0 } else { 0.0 };
        pv = v[t];
        ph = h[t];
    }
    let mut grads = vec![0f32; t_len];
    let mut carry = 0f32;
    for t in (0..t_len).rev() {
        let gv = coef[t] * surrogate(v[t] - cfg.v_th, cfg.width) + carry * cfg.kappa * (1.0 - h[t]);
        grads[t] = gv;
        carry = gv;
    }
    grads
}

/// Number of entries where the unrolled spiking gradient differs from the
/// scalar BPTT oracle, out of the total compared.
pub fn unroll_oracle_mismatches() -> (usize, usize) {
    let (mut bad, mut total) = (0, 0);
    let mut r = rng(33);
    for kappa in [1.0f32, 0.8] {
        let cfg = UnrollConfig {
            kappa,
            v_th: 0.25,
            width: 0.5,
        };
        for _ in 0..20 {
            let (t_len, n) = (6, 4);
            let cur = Tensor::uniform(&[t_len, n, 1], -0.2, 0.4, &mut r);
            let coef = Tensor::uniform(&[t_len, n, 1], -1.0, 1.0, &mut r);
            let mut tape = Tape::new();
            let iv = tape.param(cur.clone());
            let s = tape.if_unroll(iv, None, cfg).unwrap();
            let y = tape.mul_const(s, coef.clone()).unwrap();
            let loss = tape.sum(y);
            let grad = tape.backward(loss).unwrap().get(iv).unwrap().clone();
            for j in 0..n {
                let c: Vec<f32> = (0..t_len).map(|t| cur.at(&[t, j, 0])).collect();
                let w: Vec<f32> = (0..t_len).map(|t| coef.at(&[t, j, 0])).collect();
                let expect = neuron_oracle(&c, &w, cfg);
                for t in 0..t_len {
                    total += 1;
                    bad += usize::from(grad.at(&[t, j, 0]) != expect[t]);
                }
            }

            // static input accumulates the per-step gradients
            let flat = Tensor::uniform(&[n, 1], -0.2, 0.4, &mut r);
            let mut tape = Tape::new();
            let iv = tape.param(flat.clone());
            let s = tape.if_unroll(iv, Some(t_len), cfg).unwrap();
            let y = tape.mul_const(s, coef.clone()).unwrap();
            let loss = tape.sum(y);
            let grad = tape.backward(loss).unwrap().get(iv).unwrap().clone();
            for j in 0..n {
                let c = vec![flat.at(&[j, 0]); t_len];
                let w: Vec<f32> = (0..t_len).map(|t| coef.at(&[t, j, 0])).collect();
                let expect: f32 = neuron_oracle(&c, &w, cfg).iter().rev().sum();
                total += 1;
                bad += usize::from(grad.at(&[j, 0]) != expect);
            }
        }
    }
    (bad, total)
}

/// Forward step and surrogate backward of the threshold on fixed points.
pub fn heaviside_window_ok() -> bool {
    let v = Tensor::from_vec(&[6], vec![0.0, 0.01, 0.2, 0.25, 0.49, 0.6]).unwrap();
    let mut tape = Tape::new();
    let x = tape.param(v.clone());
    let h = tape.heaviside(x, 0.25, 0.5);
    let fwd_ok = tape.value(h).data() == [0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
    let loss = tape.sum(h);
    let g = tape.backward(loss).unwrap().get(x).unwrap().clone();
    // window |v - 0.25| < 0.25 with height 1 / 0.5
    fwd_ok && g.data() == [0.0, 2.0, 2.0, 2.0, 2.0, 0.0]
}

pub fn fd_errors() -> Errors {
    let mut out = Errors::new();
    matmul_both_operands(&mut out);
    spike_matmul_weights(&mut out);
    aggregate_two_and_three_dims(&mut out);
    elementwise_and_shape_ops(&mut out);
    activations(&mut out);
    stfn_input_and_affine(&mut out);
    attention_features_and_vector(&mut out);
    readouts_and_loss(&mut out);
    out
}
