use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub fn relu_forward<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes the gradient where the forward input was strictly positive.
pub fn relu_backward<T: Real>(grad_out: &Tensor<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
    grad_out.zip_map(input, |g, x| if x > T::zero() { g } else { T::zero() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Test,
}

/// Inverted-dropout mask: each entry is `0` with probability `ratio`,
/// otherwise `1 / (1 - ratio)`.
pub fn dropout_mask<T: Real>(len: usize, ratio: f64, rng: &mut dyn RngCore) -> Result<Vec<T>> {
    check_ratio(ratio)?;
    let keep = T::from_f64_lossy(1.0 / (1.0 - ratio));
    Ok((0..len)
        .map(|_| {
            if rng.random::<f64>() < ratio {
                T::zero()
            } else {
                keep
            }
        })
        .collect())
}

/// Returns the output and the mask used (train mode only).
pub fn dropout_forward<T: Real>(
    x: &Tensor<T>,
    ratio: f64,
    mode: Mode,
    rng: &mut dyn RngCore,
) -> Result<(Tensor<T>, Option<Vec<T>>)> {
    check_ratio(ratio)?;
    if mode == Mode::Test || ratio == 0.0 {
        return Ok((x.clone(), None));
    }
    let mask = dropout_mask(x.len(), ratio, rng)?;
    let y = apply_mask(x, &mask)?;
    Ok((y, Some(mask)))
}

pub fn apply_mask<T: Real>(x: &Tensor<T>, mask: &[T]) -> Result<Tensor<T>> {
    if mask.len() != x.len() {
        return Err(Error::shape(format!(
            "dropout mask has {} entries for {} units",
            mask.len(),
            x.len()
        )));
    }
    let data = x.data().iter().zip(mask).map(|(&v, &m)| v * m).collect();
    Tensor::from_vec(x.dims(), data)
}

pub fn dropout_backward<T: Real>(grad_out: &Tensor<T>, mask: Option<&[T]>) -> Result<Tensor<T>> {
    match mask {
        Some(m) => apply_mask(grad_out, m),
        None => Ok(grad_out.clone()),
    }
}

fn check_ratio(ratio: f64) -> Result<()> {
    if (0.0..1.0).contains(&ratio) {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "dropout ratio {ratio} outside [0, 1)"
        )))
    }
}
