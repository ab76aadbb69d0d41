use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    /// Cells with `score >= threshold` are called abnormal; the first point uses +inf.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC points over every distinct score, highest first, and the trapezoidal AUC.
pub fn roc_auc(scores: &[f64], abnormal: &[bool]) -> Result<(Vec<RocPoint>, f64)> {
    if scores.len() != abnormal.len() {
        return Err(Error::shape(format!(
            "{} scores for {} labels",
            scores.len(),
            abnormal.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("ROC score {s}")));
    }
    let pos = abnormal.iter().filter(|&&a| a).count();
    let neg = abnormal.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Undefined(format!(
            "ROC needs both classes ({pos} abnormal, {neg} normal)"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    // Twice the area in units of one (positive, negative) pair, kept integral.
    let mut twice_area: u128 = 0;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == t {
            if abnormal[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        twice_area += ((fp - fp0) * (tp + tp0)) as u128;
        points.push(RocPoint {
            threshold: t,
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
    }
    let auc = twice_area as f64 / (2.0 * pos as f64 * neg as f64);
    Ok((points, auc))
}
