//! Spatial-temporal feature normalization: per-node standardization of
//! membrane input currents over the joint channel and time axes.

use serde::{Deserialize, Serialize};

use crate::autodiff::{NormConfig, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Hyperparameters and affine restore of one normalized layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StfnParams {
    pub rho: f32,
    pub eps: f32,
    /// `[C]`, or `[N x C]` in per-node mode.
    pub lambda: Tensor,
    pub gamma: Tensor,
    /// Exponent of the generalized denominator; only used by the analysis.
    pub p: f32,
}

impl StfnParams {
    pub fn new(channels: usize) -> Self {
        StfnParams {
            rho: 1.0,
            eps: 1e-5,
            lambda: Tensor::ones(&[channels]),
            gamma: Tensor::zeros(&[channels]),
            p: 2.0,
        }
    }

    pub fn per_node(nodes: usize, channels: usize) -> Self {
        StfnParams {
            lambda: Tensor::ones(&[nodes, channels]),
            gamma: Tensor::zeros(&[nodes, channels]),
            ..StfnParams::new(channels)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.eps > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "normalization needs rho > 0 and eps > 0 (got {}, {})",
                self.rho, self.eps
            )));
        }
        if self.lambda.shape() != self.gamma.shape() {
            return Err(Error::shape(
                "stfn",
                format!("lambda {:?} vs gamma {:?}", self.lambda.shape(), self.gamma.shape()),
            ));
        }
        Ok(())
    }
}

/// Per-node population mean and variance over `C x T` entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StfnStats {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

fn dims(s: &Tensor) -> Result<(usize, usize, usize)> {
    match s.shape() {
        [t, n, c] if *t >= 1 && *c >= 1 => Ok((*t, *n, *c)),
        other => Err(Error::shape("stfn", format!("expected [T, N, C], got {other:?}"))),
    }
}

pub fn stfn_stats(s: &Tensor) -> Result<StfnStats> {
    let (t_len, n, c) = dims(s)?;
    let m = (t_len * c) as f64;
    let mut mean = Vec::with_capacity(n);
    let mut var = Vec::with_capacity(n);
    for v in 0..n {
        let entries = (0..t_len).flat_map(|t| {
            let base = (t * n + v) * c;
            s.data()[base..base + c].iter().map(|&x| x as f64)
        });
        let mu = entries.clone().sum::<f64>() / m;
        let sq = entries.map(|x| (x - mu) * (x - mu)).sum::<f64>() / m;
        mean.push(mu as f32);
        var.push(sq as f32);
    }
    Ok(StfnStats { mean, var })
}

/// `Y = lambda * rho * v_th * (s - mean) / sqrt(var + eps) + gamma`.
pub fn stfn_apply(s: &Tensor, stats: &StfnStats, params: &StfnParams, v_th: f32) -> Result<Tensor> {
    params.validate()?;
    let (t_len, n, c) = dims(s)?;
    let per_node = params.lambda.ndim() == 2;
    let affine_ok = if per_node {
        params.lambda.shape() == [n, c]
    } else {
        params.lambda.shape() == [c]
    };
    if !affine_ok || stats.mean.len() != n || stats.var.len() != n {
        return Err(Error::shape(
            "stfn_apply",
            format!("input {:?}, affine {:?}, stats for {}", s.shape(), params.lambda.shape(), stats.mean.len()),
        ));
    }
    let scale = params.rho * v_th;
    let mut out = Tensor::zeros(s.shape());
    for t in 0..t_len {
        for v in 0..n {
            let inv = 1.0 / (stats.var[v] + params.eps).sqrt();
            let base = (t * n + v) * c;
            for k in 0..c {
                let a = if per_node { v * c + k } else { k };
                let xh = (s.data()[base + k] - stats.mean[v]) * inv;
                out.data_mut()[base + k] = params.lambda.data()[a] * scale * xh + params.gamma.data()[a];
            }
        }
    }
    Ok(out)
}

/// Records the normalization of `s` (`[N, C]` or `[T, N, C]`) on the tape.
pub fn stfn_tape(
    tape: &mut Tape,
    s: Var,
    lambda: Var,
    gamma: Var,
    rho: f32,
    eps: f32,
    v_th: f32,
    detach_stats: bool,
) -> Result<Var> {
    tape.stfn(
        s,
        lambda,
        gamma,
        NormConfig {
            scale: rho * v_th,
            eps,
            detach_stats,
        },
    )
}

/// Standard deviation left after dividing samples of std `sigma` by `sigma^(1/p)`.
pub fn variance_after_norm(sigma: f64, p: f64) -> f64 {
    sigma.powf(1.0 - 1.0 / p)
}

/// Scalar running averages of the per-node statistics, for evaluation with
/// frozen statistics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: f32,
    pub var: f32,
    pub momentum: f32,
    pub initialized: bool,
}

impl Default for RunningStats {
    fn default() -> Self {
        RunningStats {
            mean: 0.0,
            var: 1.0,
            momentum: 0.1,
            initialized: false,
        }
    }
}

impl RunningStats {
    pub fn update(&mut self, stats: &StfnStats) {
        if stats.mean.is_empty() {
            return;
        }
        let n = stats.mean.len() as f32;
        let m = stats.mean.iter().sum::<f32>() / n;
        let v = stats.var.iter().sum::<f32>() / n;
        if self.initialized {
            self.mean = (1.0 - self.momentum) * self.mean + self.momentum * m;
            self.var = (1.0 - self.momentum) * self.var + self.momentum * v;
        } else {
            self.mean = m;
            self.var = v;
            self.initialized = true;
        }
    }

    pub fn as_stats(&self, nodes: usize) -> StfnStats {
        StfnStats {
            mean: vec![self.mean; nodes],
            var: vec![self.var; nodes],
        }
    }
}
