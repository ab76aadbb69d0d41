use crate::error::{Error, Result};

pub const THRESHOLD: f64 = 0.5;

/// `true` (abnormal) iff `score >= threshold`.
pub fn classify(score: f64, threshold: f64) -> bool {
    score >= threshold
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub fp: usize,
}

impl Confusion {
    /// Abnormal is the positive class.
    pub fn from_scores(scores: &[f64], abnormal: &[bool], threshold: f64) -> Result<Self> {
        if scores.len() != abnormal.len() {
            return Err(Error::shape(format!(
                "{} scores for {} labels",
                scores.len(),
                abnormal.len()
            )));
        }
        let mut c = Confusion::default();
        for (&s, &truth) in scores.iter().zip(abnormal) {
            match (truth, classify(s, threshold)) {
                (true, true) => c.tp += 1,
                (true, false) => c.fn_ += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fp += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fn_ + self.tn + self.fp
    }

    pub fn metrics(&self) -> Result<BinaryMetrics> {
        let pos = self.tp + self.fn_;
        let neg = self.tn + self.fp;
        if pos == 0 || neg == 0 {
            return Err(Error::Undefined(format!(
                "sensitivity and specificity need both classes ({pos} abnormal, {neg} normal)"
            )));
        }
        let sens = self.tp as f64 / pos as f64;
        let spec = self.tn as f64 / neg as f64;
        let acc = (self.tp + self.tn) as f64 / self.total() as f64;
        let h_mean = harmonic(sens, spec);
        // With no positive predictions precision is 0/0; F tends to 0 as TP = 0.
        let precision = if self.tp + self.fp == 0 {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.fp) as f64
        };
        Ok(BinaryMetrics {
            sens: 100.0 * sens,
            spec: 100.0 * spec,
            acc: 100.0 * acc,
            h_mean: 100.0 * h_mean,
            f_measure: 100.0 * harmonic(precision, sens),
        })
    }
}

fn harmonic(a: f64, b: f64) -> f64 {
    if a + b == 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

/// Threshold metrics as percentages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinaryMetrics {
    pub sens: f64,
    pub spec: f64,
    pub acc: f64,
    pub h_mean: f64,
    pub f_measure: f64,
}

pub fn binary_metrics(
    scores: &[f64],
    abnormal: &[bool],
    threshold: f64,
) -> Result<(Confusion, BinaryMetrics)> {
    let c = Confusion::from_scores(scores, abnormal, threshold)?;
    Ok((c, c.metrics()?))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
}

pub fn mean_std(values: &[f64]) -> Result<MeanStd> {
    if values.is_empty() {
        return Err(Error::invalid("mean of no values"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Ok(MeanStd { mean, std })
}
