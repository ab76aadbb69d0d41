use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Row-wise softmax of `[N, K]` logits, shifted by the row max.
pub fn softmax<T: Real>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let k = row_width(logits)?;
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.data().chunks(k) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = row.iter().map(|&v| (v - max).exp()).collect();
        let mut total = T::zero();
        for &e in &exps {
            total += e;
        }
        out.extend(exps.into_iter().map(|e| e / total));
    }
    Tensor::from_vec(logits.dims(), out)
}

pub struct LossOutput<T> {
    /// Mean negative log-likelihood of the true class.
    pub loss: T,
    pub probs: Tensor<T>,
    /// `(probs - onehot) / N`.
    pub grad: Tensor<T>,
}

pub fn softmax_cross_entropy<T: Real>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<LossOutput<T>> {
    let k = row_width(logits)?;
    let n = logits.dims()[0];
    if labels.len() != n {
        return Err(Error::shape(format!(
            "{} labels for {n} rows",
            labels.len()
        )));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::invalid(format!(
            "label {bad} out of range for {k} classes"
        )));
    }
    let probs = softmax(logits)?;
    let inv_n = T::one() / T::from_usize(n).unwrap();
    let mut loss = T::zero();
    let mut grad = probs.data().to_vec();
    for (i, &label) in labels.iter().enumerate() {
        let row = &logits.data()[i * k..(i + 1) * k];
        // log p = (z_y - max) - log sum exp(z - max), stable for large logits
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for &z in row {
            total += (z - max).exp();
        }
        loss += total.ln() - (row[label] - max);
        grad[i * k + label] = grad[i * k + label] - T::one();
    }
    for g in &mut grad {
        *g = *g * inv_n;
    }
    Ok(LossOutput {
        loss: loss * inv_n,
        probs,
        grad: Tensor::from_vec(logits.dims(), grad)?,
    })
}

fn row_width<T: Real>(logits: &Tensor<T>) -> Result<usize> {
    match *logits.dims() {
        [_, k] => Ok(k),
        _ => Err(Error::shape(format!(
            "logits must be [N, K], got {}",
            logits.shape()
        ))),
    }
}
