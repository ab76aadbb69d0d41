//! Cross-channel local response normalization.
//!
//! `y_c = x_c / s_c^beta` with `s_c = k + (alpha / n) * sum_{c' in W(c)} x_{c'}^2`,
//! where `W(c)` is the channel window `[c - n/2, c + n/2]` clipped to the
//! valid range. The window is symmetric, so `j in W(c)` iff `c in W(j)`.

use crate::error::{Error, Result};
use crate::nn::conv::dims4;
use crate::nn::spec::LrnParams;
use crate::tensor::{Real, Tensor};

fn window(c: usize, channels: usize, n: usize) -> std::ops::Range<usize> {
    let half = n / 2;
    c.saturating_sub(half)..(c + (n - 1 - half) + 1).min(channels)
}

/// Returns `(y, s)` where `s` holds the per-element denominators before the power.
pub fn lrn_forward<T: Real>(x: &Tensor<T>, p: &LrnParams) -> Result<(Tensor<T>, Tensor<T>)> {
    let [n, c, h, w] = dims4(x, "lrn input")?;
    if p.n == 0 {
        return Err(Error::invalid("lrn window must be at least 1"));
    }
    let k = T::from_f64_lossy(p.k);
    let coef = T::from_f64_lossy(p.alpha / p.n as f64);
    let beta = T::from_f64_lossy(p.beta);
    let hw = h * w;
    let xd = x.data();
    let mut scale = vec![T::zero(); x.len()];
    let mut out = vec![T::zero(); x.len()];
    for b in 0..n {
        let base = b * c * hw;
        for ch in 0..c {
            for pos in 0..hw {
                let mut sq = T::zero();
                for j in window(ch, c, p.n) {
                    let v = xd[base + j * hw + pos];
                    sq += v * v;
                }
                let idx = base + ch * hw + pos;
                let s = k + coef * sq;
                scale[idx] = s;
                out[idx] = xd[idx] * s.powf(-beta);
            }
        }
    }
    Ok((
        Tensor::from_vec(x.dims(), out)?,
        Tensor::from_vec(x.dims(), scale)?,
    ))
}

/// `dx_j = g_j s_j^-beta - (2 alpha beta / n) x_j sum_{c: j in W(c)} g_c x_c s_c^(-beta-1)`.
pub fn lrn_backward<T: Real>(
    grad_out: &Tensor<T>,
    x: &Tensor<T>,
    scale: &Tensor<T>,
    p: &LrnParams,
) -> Result<Tensor<T>> {
    let [n, c, h, w] = dims4(x, "lrn input")?;
    grad_out.check_same_shape(x, "lrn backward")?;
    scale.check_same_shape(x, "lrn backward")?;
    let coef = T::from_f64_lossy(2.0 * p.alpha * p.beta / p.n as f64);
    let beta = T::from_f64_lossy(p.beta);
    let hw = h * w;
    let (gd, xd, sd) = (grad_out.data(), x.data(), scale.data());
    // t_c = g_c x_c s_c^(-beta-1)
    let t: Vec<T> = (0..x.len())
        .map(|i| gd[i] * xd[i] * sd[i].powf(-beta - T::one()))
        .collect();
    let mut out = vec![T::zero(); x.len()];
    for b in 0..n {
        let base = b * c * hw;
        for ch in 0..c {
            for pos in 0..hw {
                let idx = base + ch * hw + pos;
                let mut acc = T::zero();
                for j in window(ch, c, p.n) {
                    acc += t[base + j * hw + pos];
                }
                out[idx] = gd[idx] * sd[idx].powf(-beta) - coef * xd[idx] * acc;
            }
        }
    }
    Tensor::from_vec(x.dims(), out)
}
