//! Empirical check of the variance-control law of the normalization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spikegraph::stfn::{stfn_stats, variance_after_norm};
use spikegraph::Tensor;

pub const SAMPLES: usize = 100_000;
pub const REL_TOL: f64 = 0.05;

pub struct LawPoint {
    pub sigma: f64,
    pub p: f64,
    pub empirical: f64,
    pub predicted: f64,
}

impl LawPoint {
    pub fn rel_err(&self) -> f64 {
        (self.empirical - self.predicted).abs() / self.predicted
    }
}

/// Gaussian samples via Box-Muller.
fn normal_samples(n: usize, sigma: f64, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let u1: f64 = 1.0 - rng.gen::<f64>();
        let u2: f64 = rng.gen();
        let r = (-2.0 * u1.ln()).sqrt();
        let th = 2.0 * std::f64::consts::PI * u2;
        out.push((sigma * r * th.cos()) as f32);
        if out.len() < n {
            out.push((sigma * r * th.sin()) as f32);
        }
    }
    out
}

/// Divides i.i.d. samples of std `sigma` by the `p`-th root of their
/// measured standard deviation and reports the resulting spread.
pub fn law_points(seed: u64) -> Vec<LawPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for sigma in [2.0, 4.0, 8.0] {
        for p in [1.0, 2.0, 4.0] {
            let x = normal_samples(SAMPLES, sigma, &mut rng);
            let t = Tensor::from_vec(&[1, 1, SAMPLES], x).expect("sample block");
            let stats = stfn_stats(&t).expect("stats");
            let std_in = (stats.var[0] as f64).sqrt();
            let denom = std_in.powf(1.0 / p);
            let y = Tensor::from_vec(&[1, 1, SAMPLES], t.data().iter().map(|&v| (v as f64 / denom) as f32).collect())
                .expect("sample block");
            let empirical = (stfn_stats(&y).expect("stats").var[0] as f64).sqrt();
            out.push(LawPoint {
                sigma,
                p,
                empirical,
                predicted: variance_after_norm(sigma, p),
            });
        }
    }
    out
}
