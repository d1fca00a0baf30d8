//! Hand-built networks on 2- and 3-node graphs, simulated step by step with
//! plain scalar loops and compared bit for bit with the engine.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use spikegraph::graph::build_csr;
use spikegraph::model::{Coding, Model, ModelSpec, ParamSet, PreparedGraph};
use spikegraph::spiking::NeuronConfig;
use spikegraph::Tensor;

const V_TH: f32 = 0.25;

/// One graph-convolution spiking layer of the reference network.
struct RefLayer {
    w: Vec<Vec<f32>>,
    b: Vec<f32>,
    norm: Option<(Vec<f32>, Vec<f32>)>,
}

/// `[t][node][channel]`
type Train = Vec<Vec<Vec<f32>>>;

struct RefRun {
    spikes: Vec<Train>,
    potentials: Vec<Train>,
}

/// Normalized adjacency rows `(neighbor, weight)` in ascending neighbor
/// order: `1 / sqrt(d_u d_v)` over the graph plus self-loops.
fn normalized_rows(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<(usize, f32)>> {
    let mut adj = vec![vec![false; n]; n];
    for v in 0..n {
        adj[v][v] = true;
    }
    for &(u, v) in edges {
        adj[u][v] = true;
        adj[v][u] = true;
    }
    let deg: Vec<f64> = adj.iter().map(|r| r.iter().filter(|&&b| b).count() as f64).collect();
    (0..n)
        .map(|v| {
            (0..n)
                .filter(|&u| adj[v][u])
                .map(|u| (u, (1.0 / deg[v].sqrt() * (1.0 / deg[u].sqrt())) as f32))
                .collect()
        })
        .collect()
}

/// Binary input row times `w`: sum of the rows selected by the spikes.
fn transform(input: &[f32], w: &[Vec<f32>]) -> Vec<f32> {
    let mut out = vec![0.0f32; w[0].len()];
    for (k, &s) in input.iter().enumerate() {
        if s != 0.0 {
            for (o, &wv) in out.iter_mut().zip(&w[k]) {
                *o += wv;
            }
        }
    }
    out
}

fn aggregate(rows: &[Vec<(usize, f32)>], z: &[Vec<f32>], b: &[f32]) -> Vec<Vec<f32>> {
    rows.iter()
        .map(|row| {
            (0..b.len())
                .map(|c| {
                    let mut acc = 0.0f64;
                    for &(u, a) in row {
                        acc += a as f64 * z[u][c] as f64;
                    }
                    acc as f32 + b[c]
                })
                .collect()
        })
        .collect()
}

/// Per-node standardization over all steps and channels of `x[t][v][c]`.
fn normalize(x: &Train, lambda: &[f32], gamma: &[f32]) -> Train {
    let (t_len, n, c) = (x.len(), x[0].len(), x[0][0].len());
    let m = (t_len * c) as f64;
    let mut out = x.clone();
    for v in 0..n {
        let mut sum = 0.0f64;
        for step in x {
            for &e in &step[v] {
                sum += e as f64;
            }
        }
        let mean = sum / m;
        let mut sq = 0.0f64;
        for step in x {
            for &e in &step[v] {
                sq += (e as f64 - mean) * (e as f64 - mean);
            }
        }
        let inv = (1.0 / (sq / m + 1e-5f32 as f64).sqrt()) as f32;
        let mean = mean as f32;
        for t in 0..t_len {
            for k in 0..c {
                out[t][v][k] = lambda[k] * V_TH * ((x[t][v][k] - mean) * inv) + gamma[k];
            }
        }
    }
    out
}

/// Integrate-and-fire with reset by multiplication: `v = kappa v (1 - h) + I`.
fn fire(currents: &Train, kappa: f32) -> (Train, Train) {
    let (n, c) = (currents[0].len(), currents[0][0].len());
    let (mut v, mut h) = (vec![vec![0.0f32; c]; n], vec![vec![0.0f32; c]; n]);
    let (mut spikes, mut pots) = (Vec::new(), Vec::new());
    for step in currents {
        for i in 0..n {
            for k in 0..c {
                v[i][k] = kappa * v[i][k] * (1.0 - h[i][k]) + step[i][k];
                h[i][k] = if v[i][k] - V_TH >= 0.0 { 1.0 } else { 0.0 };
            }
        }
        spikes.push(h.clone());
        pots.push(v.clone());
    }
    (spikes, pots)
}

fn reference(
    rows: &[Vec<(usize, f32)>],
    x: &[Vec<f32>],
    layers: &[RefLayer],
    t_len: usize,
    kappa: f32,
) -> RefRun {
    let mut run = RefRun {
        spikes: Vec::new(),
        potentials: Vec::new(),
    };
    for (i, layer) in layers.iter().enumerate() {
        // the first layer sees the same binary input at every step, so its
        // current is computed once
        let steps: Train = if i == 0 {
            let z: Vec<Vec<f32>> = x.iter().map(|r| transform(r, &layer.w)).collect();
            vec![aggregate(rows, &z, &layer.b)]
        } else {
            run.spikes[i - 1]
                .iter()
                .map(|s| {
                    let z: Vec<Vec<f32>> = s.iter().map(|r| transform(r, &layer.w)).collect();
                    aggregate(rows, &z, &layer.b)
                })
                .collect()
        };
        let steps = match &layer.norm {
            Some((l, g)) => normalize(&steps, l, g),
            None => steps,
        };
        let currents: Train = if steps.len() == 1 {
            vec![steps[0].clone(); t_len]
        } else {
            steps
        };
        let (s, p) = fire(&currents, kappa);
        run.spikes.push(s);
        run.potentials.push(p);
    }
    run
}

fn flat(rows: &[Vec<f32>]) -> Vec<f32> {
    rows.iter().flatten().copied().collect()
}

fn tensor(rows: &[Vec<f32>]) -> Tensor {
    Tensor::from_vec(&[rows.len(), rows[0].len()], flat(rows)).expect("rectangular")
}

fn bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn compare_trains(label: &str, engine: &Tensor, reference: &Train) -> Result<(), String> {
    let r: Vec<f32> = reference.iter().flatten().flatten().copied().collect();
    if bits(engine.data()) != bits(&r) {
        return Err(format!("{label}: engine {:?} vs reference {:?}", engine.data(), r));
    }
    Ok(())
}

struct Case {
    edges: Vec<(usize, usize)>,
    x: Vec<Vec<f32>>,
    layers: Vec<RefLayer>,
    t_len: usize,
    kappa: f32,
    coding: Coding,
    head: Option<(Vec<Vec<f32>>, Vec<f32>)>,
}

impl Case {
    fn spec(&self) -> ModelSpec {
        let input_dim = self.x[0].len();
        let hidden = match self.coding {
            Coding::Rate => self.layers.len(),
            Coding::Roc => self.layers.len() - 1,
        };
        let widths: Vec<usize> = self.layers[..hidden].iter().map(|l| l.b.len()).collect();
        let classes = match (&self.head, self.coding) {
            (Some((_, b2)), _) => b2.len(),
            (None, _) => self.layers.last().expect("layers").b.len(),
        };
        ModelSpec {
            layer_kinds: vec![spikegraph::model::LayerKind::Gconv; widths.len()],
            layer_widths: widths,
            stfn: self.layers[0].norm.is_some(),
            t_len: self.t_len,
            neuron: NeuronConfig {
                kappa: self.kappa,
                ..NeuronConfig::default()
            },
            coding: self.coding,
            head_hidden: 0,
            dropout: 0.0,
            ..ModelSpec::gc_snn(input_dim, classes)
        }
    }

    fn params(&self) -> ParamSet {
        let mut p = ParamSet::new();
        for (i, l) in self.layers.iter().enumerate() {
            p.push(format!("layer{i}.w"), tensor(&l.w));
            p.push(format!("layer{i}.b"), Tensor::from_vec(&[l.b.len()], l.b.clone()).expect("bias"));
            if let Some((lam, gam)) = &l.norm {
                p.push(format!("layer{i}.lambda"), Tensor::from_vec(&[lam.len()], lam.clone()).expect("scale"));
                p.push(format!("layer{i}.gamma"), Tensor::from_vec(&[gam.len()], gam.clone()).expect("shift"));
            }
        }
        if let Some((w2, b2)) = &self.head {
            p.push("head.w2", tensor(w2));
            p.push("head.b2", Tensor::from_vec(&[b2.len()], b2.clone()).expect("bias"));
        }
        p
    }

    /// Runs both simulations and returns the spikes emitted out of the
    /// spike slots available.
    fn run(&self) -> Result<(usize, usize), String> {
        let n = self.x.len();
        let model = Model::from_params(self.spec(), self.params()).map_err(|e| e.to_string())?;
        let g = build_csr(&self.edges, n, true).map_err(|e| e.to_string())?;
        let pg = PreparedGraph::new(&g, tensor(&self.x), true).map_err(|e| e.to_string())?;
        let fwd = model
            .forward(&pg, false, &mut ChaCha8Rng::seed_from_u64(0))
            .map_err(|e| e.to_string())?;

        let rows = normalized_rows(n, &self.edges);
        let r = reference(&rows, &self.x, &self.layers, self.t_len, self.kappa);
        let (mut fired, mut slots) = (0, 0);
        for (i, &s) in fwd.layer_spikes.iter().enumerate() {
            compare_trains(&format!("layer {i} spikes"), fwd.tape.value(s), &r.spikes[i])?;
            let pots = fwd.tape.potentials(s).ok_or("missing potentials")?;
            compare_trains(&format!("layer {i} potentials"), pots, &r.potentials[i])?;
            fired += fwd.tape.value(s).count_nonzero();
            slots += fwd.tape.value(s).len();
        }

        let last = r.spikes.last().expect("layers");
        let k = model.spec.num_classes;
        let mut logits = vec![vec![0.0f32; k]; n];
        match (&self.head, self.coding) {
            (Some((w2, b2)), Coding::Rate) => {
                let inv_t = 1.0 / self.t_len as f32;
                for v in 0..n {
                    let mut decoded = vec![0.0f32; w2.len()];
                    for step in last {
                        for (d, &s) in decoded.iter_mut().zip(&step[v]) {
                            *d += inv_t * s;
                        }
                    }
                    for (j, &d) in decoded.iter().enumerate() {
                        if d != 0.0 {
                            for c in 0..k {
                                logits[v][c] += d * w2[j][c];
                            }
                        }
                    }
                    for c in 0..k {
                        logits[v][c] += b2[c];
                    }
                }
            }
            (None, Coding::Roc) => {
                let mut weight = 4.0f32;
                let mut weights = Vec::new();
                for _ in 0..self.t_len {
                    weights.push(weight);
                    weight *= 0.5;
                }
                for v in 0..n {
                    for (t, step) in last.iter().enumerate() {
                        for c in 0..k {
                            logits[v][c] += weights[t] * step[v][c];
                        }
                    }
                }
                // earliest firing output neuron wins; ties go to the higher potential
                let (pred, steps) = fwd.predictions(&model.spec);
                for v in 0..n {
                    let first = (0..self.t_len).find(|&t| last[t][v].iter().any(|&s| s != 0.0));
                    let (want_class, want_step) = match first {
                        Some(t) => {
                            let mut best = None::<usize>;
                            for c in 0..k {
                                let p = r.potentials.last().expect("layers")[t][v][c];
                                if last[t][v][c] != 0.0
                                    && best.map_or(true, |b| p > r.potentials.last().expect("layers")[t][v][b])
                                {
                                    best = Some(c);
                                }
                            }
                            (best.expect("a spike"), t + 1)
                        }
                        None => {
                            let fin = &r.potentials.last().expect("layers")[self.t_len - 1][v];
                            let mut arg = 0;
                            for c in 1..k {
                                if fin[c] > fin[arg] {
                                    arg = c;
                                }
                            }
                            (arg, self.t_len)
                        }
                    };
                    if pred[v] != want_class || steps[v] != want_step {
                        return Err(format!(
                            "node {v}: engine decides {} at {}, reference {want_class} at {want_step}",
                            pred[v], steps[v]
                        ));
                    }
                }
            }
            _ => return Err("unsupported case".into()),
        }
        if bits(fwd.logits().data()) != bits(&flat(&logits)) {
            return Err(format!("logits: engine {:?} vs reference {:?}", fwd.logits().data(), logits));
        }
        Ok((fired, slots))
    }
}

/// Two connected nodes, one spiking layer, linear readout.
fn two_node_rate() -> Case {
    Case {
        edges: vec![(0, 1)],
        x: vec![vec![1.0, 0.0, 1.0], vec![0.0, 1.0, 1.0]],
        layers: vec![RefLayer {
            w: vec![vec![0.25, -0.125], vec![0.0625, 0.375], vec![-0.125, 0.25]],
            b: vec![0.03125, -0.0625],
            norm: None,
        }],
        t_len: 4,
        kappa: 1.0,
        coding: Coding::Rate,
        head: Some((vec![vec![1.5, -0.5], vec![-0.75, 2.0]], vec![0.125, -0.25])),
    }
}

/// Path 0-1-2, two layers with per-node normalization and a leaky neuron.
fn three_node_normalized() -> Case {
    Case {
        edges: vec![(0, 1), (1, 2)],
        x: vec![vec![1.0, 1.0], vec![1.0, 0.0], vec![0.0, 1.0]],
        layers: vec![
            RefLayer {
                w: vec![vec![0.3, -0.7, 0.45], vec![-0.2, 0.9, 0.15]],
                b: vec![0.05, -0.1, 0.02],
                norm: Some((vec![1.5, 0.8, 2.0], vec![0.1, 0.05, -0.02])),
            },
            RefLayer {
                w: vec![vec![0.6, -0.3], vec![0.2, 0.7], vec![-0.4, 0.5]],
                b: vec![0.01, 0.03],
                norm: Some((vec![1.2, 0.9], vec![0.06, 0.0])),
            },
        ],
        t_len: 5,
        kappa: 0.5,
        coding: Coding::Rate,
        head: Some((vec![vec![0.7, -0.2], vec![-0.6, 1.1]], vec![0.05, -0.05])),
    }
}

/// Path 0-1-2 with a rank-order output layer and first-spike decisions.
fn three_node_rank_order() -> Case {
    Case {
        edges: vec![(0, 1), (1, 2)],
        x: vec![vec![1.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0]],
        layers: vec![
            RefLayer {
                w: vec![vec![0.4, 0.1], vec![0.05, 0.35]],
                b: vec![0.0, 0.02],
                norm: None,
            },
            RefLayer {
                w: vec![vec![0.2, 0.05], vec![0.03, 0.14]],
                b: vec![0.01, 0.0],
                norm: None,
            },
        ],
        t_len: 6,
        kappa: 1.0,
        coding: Coding::Roc,
        head: None,
    }
}

/// Outcome of each reference case: name, and spikes out of slots on success.
pub fn cases() -> Vec<(&'static str, Result<(usize, usize), String>)> {
    vec![
        ("two-node rate network", two_node_rate().run()),
        ("three-node normalized leaky network", three_node_normalized().run()),
        ("three-node rank-order network", three_node_rank_order().run()),
    ]
}
