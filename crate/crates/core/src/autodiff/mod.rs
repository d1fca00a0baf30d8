//! Reverse-mode differentiation over a recorded tape of fused kernels.

pub mod kernels;
mod tape;

use rand::Rng;

pub use tape::{surrogate, Gradients, NormConfig, Tape, UnrollConfig, Var};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Inverted-dropout mask: entries are `0` with probability `rate`, else `1/(1-rate)`.
pub fn dropout_mask<R: Rng + ?Sized>(shape: &[usize], rate: f32, rng: &mut R) -> Result<Tensor> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidRate(rate));
    }
    let keep = 1.0 / (1.0 - rate);
    let mut mask = Tensor::zeros(shape);
    for m in mask.data_mut() {
        if rate == 0.0 || rng.gen::<f32>() >= rate {
            *m = keep;
        }
    }
    Ok(mask)
}

/// Applies dropout to `x` in training mode; identity otherwise.
pub fn dropout<R: Rng + ?Sized>(
    tape: &mut Tape,
    x: Var,
    rate: f32,
    training: bool,
    rng: &mut R,
) -> Result<Var> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidRate(rate));
    }
    if !training || rate == 0.0 {
        return Ok(x);
    }
    let mask = dropout_mask(tape.value(x).shape(), rate, rng)?;
    tape.mul_const(x, mask)
}

/// Compares the tape gradient of a scalar function against central
/// differences with the given step.
///
/// `f` records its computation on a fresh tape from the parameter handle it
/// receives. The result is the largest entrywise difference divided by the
/// largest gradient magnitude (of either estimate), so entries with tiny
/// gradients do not dominate.
pub fn fd_check<F>(f: F, x: &Tensor, step: f32) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.param(x.clone());
    let out = f(&mut tape, xv)?;
    let grads = tape.backward(out)?;
    let analytic = grads
        .get(xv)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(x.shape()));

    let eval = |p: &Tensor| -> Result<f64> {
        let mut t = Tape::new();
        let v = t.param(p.clone());
        let o = f(&mut t, v)?;
        Ok(t.value(o).data()[0] as f64)
    };
    let mut numeric = vec![0.0f64; x.len()];
    let mut probe = x.clone();
    for (i, n) in numeric.iter_mut().enumerate() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let hi = eval(&probe)?;
        probe.data_mut()[i] = orig - step;
        let lo = eval(&probe)?;
        probe.data_mut()[i] = orig;
        *n = (hi - lo) / (2.0 * step as f64);
    }

    let mut scale = 0.0f64;
    let mut worst = 0.0f64;
    for (&a, &n) in analytic.data().iter().zip(&numeric) {
        scale = scale.max((a as f64).abs()).max(n.abs());
        worst = worst.max((a as f64 - n).abs());
    }
    Ok(if scale == 0.0 { worst } else { worst / scale })
}
