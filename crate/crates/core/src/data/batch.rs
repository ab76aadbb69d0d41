use rand::seq::SliceRandom;
use rand::RngCore;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// A minibatch in network layout `[N, C, H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T = f32> {
    pub inputs: Tensor<T>,
    pub labels: Vec<usize>,
}

impl<T: Real> Batch<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Class counts of a training patch set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BalanceReport {
    pub normal: usize,
    pub abnormal: usize,
}

impl BalanceReport {
    /// Abnormal-to-normal patch ratio.
    pub fn ratio(&self) -> f64 {
        self.abnormal as f64 / self.normal as f64
    }
}

/// Shuffle sample indices and split them into batches; the final short batch is kept.
///
/// Balance comes from the per-class augmentation multiplicities, so no
/// resampling happens here.
pub fn balance_and_batch(
    abnormal: &[bool],
    batch_size: usize,
    rng: &mut dyn RngCore,
) -> Result<(Vec<Vec<usize>>, BalanceReport)> {
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let n_abnormal = abnormal.iter().filter(|&&a| a).count();
    let report = BalanceReport {
        normal: abnormal.len() - n_abnormal,
        abnormal: n_abnormal,
    };
    if report.normal == 0 || report.abnormal == 0 {
        return Err(Error::invalid(format!(
            "training set needs both classes, got {} normal and {} abnormal patches",
            report.normal, report.abnormal
        )));
    }
    let mut order: Vec<usize> = (0..abnormal.len()).collect();
    order.shuffle(rng);
    Ok((
        order.chunks(batch_size).map(<[usize]>::to_vec).collect(),
        report,
    ))
}
