//! Integrate-and-fire dynamics, the rectangular surrogate gradient, and the
//! rate and rank-order spike codes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, UnrollConfig, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use crate::autodiff::surrogate;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeuronConfig {
    pub v_th: f32,
    /// Decay of the retained potential; 1.0 gives non-leaky IF neurons.
    pub kappa: f32,
    /// Width of the surrogate window.
    pub width: f32,
}

impl Default for NeuronConfig {
    fn default() -> Self {
        NeuronConfig {
            v_th: 0.25,
            kappa: 1.0,
            width: 0.5,
        }
    }
}

impl NeuronConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.v_th > 0.0) {
            return Err(Error::InvalidConfig(format!("v_th must be positive, got {}", self.v_th)));
        }
        if !(0.0..=1.0).contains(&self.kappa) {
            return Err(Error::OutOfRange {
                what: "kappa",
                value: self.kappa as f64,
                lo: 0.0,
                hi: 1.0,
            });
        }
        if !(self.width > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "surrogate width must be positive, got {}",
                self.width
            )));
        }
        Ok(())
    }

    pub fn unroll(&self) -> UnrollConfig {
        UnrollConfig {
            kappa: self.kappa,
            v_th: self.v_th,
            width: self.width,
        }
    }
}

/// Membrane potentials and last spikes of one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct NeuronState {
    pub v: Tensor,
    pub h: Tensor,
}

impl NeuronState {
    pub fn zeros(shape: &[usize]) -> Self {
        NeuronState {
            v: Tensor::zeros(shape),
            h: Tensor::zeros(shape),
        }
    }
}

/// One firing-and-reset step: `v' = kappa * v * (1 - h) + I`, `h' = 1[v' >= v_th]`.
pub fn lif_step(state: &NeuronState, input: &Tensor, cfg: &NeuronConfig) -> Result<NeuronState> {
    if state.v.shape() != input.shape() || state.h.shape() != input.shape() {
        return Err(Error::shape(
            "lif_step",
            format!("state {:?} vs input {:?}", state.v.shape(), input.shape()),
        ));
    }
    let mut v = Tensor::zeros(input.shape());
    let mut h = Tensor::zeros(input.shape());
    for i in 0..input.len() {
        let nv = cfg.kappa * state.v.data()[i] * (1.0 - state.h.data()[i]) + input.data()[i];
        v.data_mut()[i] = nv;
        h.data_mut()[i] = if nv - cfg.v_th >= 0.0 { 1.0 } else { 0.0 };
    }
    Ok(NeuronState { v, h })
}

/// Spike step `1[v >= v_th]` on a potential, with the rectangular surrogate
/// as its backward rule.
pub fn heaviside_surrogate(tape: &mut Tape, v: Var, v_th: f32, width: f32) -> Result<Var> {
    if !(width > 0.0) {
        return Err(Error::InvalidConfig(format!("surrogate width {width} must be positive")));
    }
    Ok(tape.heaviside(v, v_th, width))
}

/// Binary spike trains `[T x N x C]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpikeTensor {
    data: Tensor,
}

impl SpikeTensor {
    pub fn new(data: Tensor) -> Result<Self> {
        if data.ndim() != 3 {
            return Err(Error::shape("spike_tensor", format!("{:?}", data.shape())));
        }
        if let Some(v) = data.first_non_binary() {
            return Err(Error::NonBinaryInput {
                op: "spike_tensor",
                value: v,
            });
        }
        Ok(SpikeTensor { data })
    }

    pub fn t_len(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.data
    }

    pub fn into_tensor(self) -> Tensor {
        self.data
    }

    /// Time slice `t` as `[N x C]`.
    pub fn step(&self, t: usize) -> Tensor {
        let s = self.data.shape();
        let block = s[1] * s[2];
        Tensor::from_vec(&[s[1], s[2]], self.data.data()[t * block..(t + 1) * block].to_vec())
            .expect("slice")
    }

    pub fn firing_rate(&self) -> f64 {
        firing_rate(&self.data)
    }
}

/// Mean of a binary tensor; 0 when empty.
pub fn firing_rate(spikes: &Tensor) -> f64 {
    if spikes.is_empty() {
        return 0.0;
    }
    spikes.data().iter().map(|&s| s as f64).sum::<f64>() / spikes.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncodeMode {
    /// The same binary vector at every step.
    Repeat,
    /// Independent Bernoulli draws with the input as firing probability.
    Bernoulli,
}

pub fn encode_rate<R: Rng + ?Sized>(
    x: &Tensor,
    t_len: usize,
    mode: EncodeMode,
    rng: &mut R,
) -> Result<SpikeTensor> {
    if x.ndim() != 2 {
        return Err(Error::shape("encode_rate", format!("{:?}", x.shape())));
    }
    let (n, c) = (x.shape()[0], x.shape()[1]);
    let mut data = Vec::with_capacity(t_len * x.len());
    match mode {
        EncodeMode::Repeat => {
            if let Some(v) = x.first_non_binary() {
                return Err(Error::NonBinaryInput {
                    op: "encode_rate",
                    value: v,
                });
            }
            for _ in 0..t_len {
                data.extend_from_slice(x.data());
            }
        }
        EncodeMode::Bernoulli => {
            if let Some(&v) = x.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::OutOfRange {
                    what: "bernoulli firing probability",
                    value: v as f64,
                    lo: 0.0,
                    hi: 1.0,
                });
            }
            for _ in 0..t_len {
                data.extend(
                    x.data()
                        .iter()
                        .map(|&p| if rng.gen::<f32>() < p { 1.0 } else { 0.0 }),
                );
            }
        }
    }
    SpikeTensor::new(Tensor::from_vec(&[t_len, n, c], data)?)
}

/// Mean over the time axis: `[T x N x C] -> [N x C]`.
pub fn rate_decode(spikes: &Tensor) -> Result<Tensor> {
    if spikes.ndim() < 2 || spikes.shape()[0] == 0 {
        return Err(Error::shape("rate_decode", format!("{:?}", spikes.shape())));
    }
    let t_len = spikes.shape()[0];
    let block = spikes.len() / t_len;
    let mut out = Tensor::zeros(&spikes.shape()[1..]);
    for t in 0..t_len {
        for (o, &s) in out
            .data_mut()
            .iter_mut()
            .zip(&spikes.data()[t * block..(t + 1) * block])
        {
            *o += s;
        }
    }
    let inv = 1.0 / t_len as f32;
    out.data_mut().iter_mut().for_each(|o| *o *= inv);
    Ok(out)
}

fn check_penalty(r: f32) -> Result<()> {
    if r > 0.0 && r < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidPenalty(r))
    }
}

/// Firing order of a presynaptic group.
#[derive(Clone, Debug, PartialEq)]
pub struct RocState {
    /// Rank of each neuron's first spike; `None` if it never fired.
    pub order: Vec<Option<usize>>,
    pub r: f32,
}

impl RocState {
    /// Ranks neurons by first-spike step, breaking ties by index.
    pub fn from_first_spikes(first_spike: &[Option<usize>], r: f32) -> Result<Self> {
        check_penalty(r)?;
        let mut fired: Vec<(usize, usize)> = first_spike
            .iter()
            .enumerate()
            .filter_map(|(j, s)| s.map(|s| (s, j)))
            .collect();
        fired.sort_unstable();
        let mut order = vec![None; first_spike.len()];
        for (rank, &(_, j)) in fired.iter().enumerate() {
            order[j] = Some(rank);
        }
        Ok(RocState { order, r })
    }

    pub fn fired(&self) -> Vec<bool> {
        self.order.iter().map(Option::is_some).collect()
    }

    /// `r^rank` per neuron, 0 for silent ones.
    pub fn factors(&self) -> Vec<f32> {
        self.order
            .iter()
            .map(|o| o.map_or(0.0, |k| self.r.powi(k as i32)))
            .collect()
    }
}

/// Target potentials `sum_j r^order(j) * w[j, :]` for a presynaptic group
/// feeding a `[J x P]` weight matrix.
pub fn roc_accumulate(state: &RocState, w: &Tensor) -> Result<Tensor> {
    check_penalty(state.r)?;
    if w.ndim() != 2 || w.shape()[0] != state.order.len() {
        return Err(Error::shape(
            "roc_accumulate",
            format!("{} neurons vs weights {:?}", state.order.len(), w.shape()),
        ));
    }
    let p = w.shape()[1];
    let mut out = Tensor::zeros(&[p]);
    for (j, f) in state.factors().into_iter().enumerate() {
        if f == 0.0 {
            continue;
        }
        for (o, &wv) in out.data_mut().iter_mut().zip(w.row(j)) {
            *o += f * wv;
        }
    }
    Ok(out)
}

/// First step at which each column of a `[T x K]` spike matrix fires.
pub fn first_spike_steps(spikes: &[f32], t_len: usize, k: usize) -> Vec<Option<usize>> {
    (0..k)
        .map(|j| (0..t_len).find(|&t| spikes[t * k + j] != 0.0))
        .collect()
}

/// Rank-order weighting of a spike train `[T x N x C]`: within each node, the
/// first spike of channel `j` is replaced by `r^rank(j)` and later spikes are
/// dropped. Ranks follow first-spike step, then channel index.
pub fn roc_weights(spikes: &Tensor, r: f32) -> Result<Tensor> {
    check_penalty(r)?;
    let (t_len, n, c) = match spikes.shape() {
        [t, n, c] => (*t, *n, *c),
        other => return Err(Error::shape("roc_weights", format!("{other:?}"))),
    };
    let mut out = Tensor::zeros(spikes.shape());
    for v in 0..n {
        let mut rank = 0i32;
        let mut done = vec![false; c];
        for t in 0..t_len {
            let base = (t * n + v) * c;
            for j in 0..c {
                if !done[j] && spikes.data()[base + j] != 0.0 {
                    done[j] = true;
                    out.data_mut()[base + j] = r.powi(rank);
                    rank += 1;
                }
            }
        }
    }
    Ok(out)
}

/// Winner-takes-all decode of one output group.
///
/// `spikes` and `potentials` are `[T x K]`. Returns the class and the
/// decision step (0-based) or `None` when no output neuron fired, in which
/// case the class is the argmax of the final potentials.
pub fn roc_decode(spikes: &[f32], potentials: &[f32], t_len: usize, k: usize) -> (usize, Option<usize>) {
    for t in 0..t_len {
        let row = &spikes[t * k..(t + 1) * k];
        let pot = &potentials[t * k..(t + 1) * k];
        let mut best: Option<usize> = None;
        for j in 0..k {
            if row[j] != 0.0 && best.map_or(true, |b| pot[j] > pot[b]) {
                best = Some(j);
            }
        }
        if let Some(b) = best {
            return (b, Some(t));
        }
    }
    let last = if t_len == 0 {
        &potentials[0..0]
    } else {
        &potentials[(t_len - 1) * k..t_len * k]
    };
    (crate::tensor::argmax(last), None)
}

/// Non-differentiable integrate-and-fire unroll over `[T x N x C]` currents;
/// returns spikes and potentials. Reference path for the fused tape op.
pub fn simulate(currents: &Tensor, cfg: &NeuronConfig) -> Result<(Tensor, Tensor)> {
    if currents.ndim() < 2 {
        return Err(Error::shape("simulate", format!("{:?}", currents.shape())));
    }
    let t_len = currents.shape()[0];
    let inner = &currents.shape()[1..];
    let block: usize = inner.iter().product();
    let mut state = NeuronState::zeros(inner);
    let mut spikes = Tensor::zeros(currents.shape());
    let mut pots = Tensor::zeros(currents.shape());
    for t in 0..t_len {
        let input = Tensor::from_vec(inner, currents.data()[t * block..(t + 1) * block].to_vec())?;
        state = lif_step(&state, &input, cfg)?;
        spikes.data_mut()[t * block..(t + 1) * block].copy_from_slice(state.h.data());
        pots.data_mut()[t * block..(t + 1) * block].copy_from_slice(state.v.data());
    }
    Ok((spikes, pots))
}
