use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::aggregate::CellScore;
use super::metrics::{
    binary_metrics, classify, mean_std, BinaryMetrics, Confusion, MeanStd, THRESHOLD,
};
use super::roc::{roc_auc, RocPoint};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quartiles {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Linear-interpolation quantile of sorted values at `p` in `[0, 1]`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quartiles(values: &[f64]) -> Option<Quartiles> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(Quartiles {
        min: v[0],
        q1: quantile_sorted(&v, 0.25),
        median: quantile_sorted(&v, 0.5),
        q3: quantile_sorted(&v, 0.75),
        max: v[v.len() - 1],
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassRow {
    pub class_label: u8,
    pub total: usize,
    /// Cells whose thresholded binary call matches their class.
    pub correct: usize,
    pub quartiles: Option<Quartiles>,
}

impl ClassRow {
    pub fn percent_correct(&self) -> Option<f64> {
        (self.total > 0).then(|| 100.0 * self.correct as f64 / self.total as f64)
    }
}

/// One row per class 1-7.
pub fn per_class_report(scores: &[CellScore], threshold: f64) -> Vec<ClassRow> {
    (1..=7u8)
        .map(|label| {
            let members: Vec<&CellScore> =
                scores.iter().filter(|s| s.class_label == label).collect();
            let values: Vec<f64> = members.iter().map(|s| s.score).collect();
            ClassRow {
                class_label: label,
                total: members.len(),
                correct: members
                    .iter()
                    .filter(|s| classify(s.score, threshold) == s.abnormal)
                    .count(),
                quartiles: quartiles(&values),
            }
        })
        .collect()
}

/// Percentage of misclassified cells.
pub fn seven_class_overall_error(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::shape(format!(
            "{} predictions for {} labels",
            predicted.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::Undefined("overall error of an empty set".into()));
    }
    let wrong = predicted.iter().zip(truth).filter(|(p, t)| p != t).count();
    Ok(100.0 * wrong as f64 / truth.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub fold: usize,
    pub confusion: Confusion,
    pub metrics: BinaryMetrics,
    pub auc: f64,
    pub overall_error: Option<f64>,
}

pub fn fold_result(fold: usize, scores: &[CellScore], seven_class: bool) -> Result<FoldResult> {
    let s: Vec<f64> = scores.iter().map(|c| c.score).collect();
    let y: Vec<bool> = scores.iter().map(|c| c.abnormal).collect();
    let (confusion, metrics) = binary_metrics(&s, &y, THRESHOLD)?;
    let (_, auc) = roc_auc(&s, &y)?;
    let overall_error = if seven_class {
        let pred: Vec<usize> = scores.iter().map(|c| c.predicted_class).collect();
        let truth: Vec<usize> = scores
            .iter()
            .map(|c| usize::from(c.class_label - 1))
            .collect();
        Some(seven_class_overall_error(&pred, &truth)?)
    } else {
        None
    };
    Ok(FoldResult {
        fold,
        confusion,
        metrics,
        auc,
        overall_error,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub sens: MeanStd,
    pub spec: MeanStd,
    pub acc: MeanStd,
    pub h_mean: MeanStd,
    pub f_measure: MeanStd,
    pub auc: MeanStd,
    pub overall_error: Option<MeanStd>,
}

/// Metrics are computed per fold and then averaged.
pub fn summarize(folds: &[FoldResult]) -> Result<Summary> {
    let col = |f: fn(&FoldResult) -> f64| mean_std(&folds.iter().map(f).collect::<Vec<_>>());
    let oe: Option<Vec<f64>> = folds.iter().map(|f| f.overall_error).collect();
    Ok(Summary {
        sens: col(|f| f.metrics.sens)?,
        spec: col(|f| f.metrics.spec)?,
        acc: col(|f| f.metrics.acc)?,
        h_mean: col(|f| f.metrics.h_mean)?,
        f_measure: col(|f| f.metrics.f_measure)?,
        auc: col(|f| f.auc)?,
        overall_error: oe.map(|v| mean_std(&v)).transpose()?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub perturb: u32,
    pub folds: Vec<FoldResult>,
    pub summary: Summary,
    /// ROC over every scored cell pooled across folds.
    pub roc: Vec<RocPoint>,
    pub pooled_auc: f64,
    pub per_class: Vec<ClassRow>,
    pub scores: Vec<(usize, CellScore)>,
}

impl EvaluationReport {
    pub fn build(
        fold_scores: Vec<(usize, Vec<CellScore>)>,
        perturb: u32,
        seven_class: bool,
    ) -> Result<Self> {
        let folds = fold_scores
            .iter()
            .map(|(f, s)| fold_result(*f, s, seven_class))
            .collect::<Result<Vec<_>>>()?;
        let scores: Vec<(usize, CellScore)> = fold_scores
            .into_iter()
            .flat_map(|(f, s)| s.into_iter().map(move |c| (f, c)))
            .collect();
        let all: Vec<CellScore> = scores.iter().map(|(_, c)| c.clone()).collect();
        let (roc, pooled_auc) = roc_auc(
            &all.iter().map(|c| c.score).collect::<Vec<_>>(),
            &all.iter().map(|c| c.abnormal).collect::<Vec<_>>(),
        )?;
        Ok(Self {
            perturb,
            summary: summarize(&folds)?,
            folds,
            roc,
            pooled_auc,
            per_class: per_class_report(&all, THRESHOLD),
            scores,
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "center perturbation: {} px", self.perturb);
        let _ = writeln!(
            s,
            "{:<6}{:>8}{:>8}{:>8}{:>8}{:>11}{:>8}",
            "fold", "Sens", "Spec", "Acc", "H-mean", "F-measure", "AUC"
        );
        for f in &self.folds {
            let m = &f.metrics;
            let _ = writeln!(
                s,
                "{:<6}{:>8.2}{:>8.2}{:>8.2}{:>8.2}{:>11.2}{:>8.4}",
                f.fold, m.sens, m.spec, m.acc, m.h_mean, m.f_measure, f.auc
            );
        }
        let ms = |v: MeanStd, p: usize| format!("{:.p$}±{:.p$}", v.mean, v.std);
        let sm = &self.summary;
        let _ = writeln!(
            s,
            "mean  Sens {}  Spec {}  Acc {}  H-mean {}  F-measure {}  AUC {}",
            ms(sm.sens, 1),
            ms(sm.spec, 1),
            ms(sm.acc, 1),
            ms(sm.h_mean, 1),
            ms(sm.f_measure, 1),
            ms(sm.auc, 3)
        );
        if let Some(oe) = sm.overall_error {
            let _ = writeln!(s, "seven-class overall error {}%", ms(oe, 1));
        }
        let _ = writeln!(s, "pooled AUC {:.4}", self.pooled_auc);
        let _ = writeln!(s, "\nclass  correct/total");
        for row in &self.per_class {
            match row.percent_correct() {
                Some(p) => {
                    let _ = writeln!(
                        s,
                        "{:<7}{}/{} ({p:.1}%)",
                        row.class_label, row.correct, row.total
                    );
                }
                None => {
                    let _ = writeln!(s, "{:<7}-", row.class_label);
                }
            }
        }
        s
    }

    /// Machine-readable `key=value` lines.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "perturb={}", self.perturb);
        let _ = writeln!(s, "folds={}", self.folds.len());
        let sm = &self.summary;
        for (k, v) in [
            ("sens", sm.sens),
            ("spec", sm.spec),
            ("acc", sm.acc),
            ("h_mean", sm.h_mean),
            ("f_measure", sm.f_measure),
            ("auc", sm.auc),
        ]
        .into_iter()
        .chain(sm.overall_error.map(|v| ("overall_error", v)))
        {
            let _ = writeln!(s, "{k}_mean={:.6}", v.mean);
            let _ = writeln!(s, "{k}_std={:.6}", v.std);
        }
        let _ = writeln!(s, "pooled_auc={:.6}", self.pooled_auc);
        for f in &self.folds {
            let c = f.confusion;
            let _ = writeln!(
                s,
                "fold{}: tp={} fn={} tn={} fp={} sens={:.6} spec={:.6} acc={:.6} h_mean={:.6} f_measure={:.6} auc={:.6}",
                f.fold, c.tp, c.fn_, c.tn, c.fp, f.metrics.sens, f.metrics.spec, f.metrics.acc, f.metrics.h_mean, f.metrics.f_measure, f.auc
            );
        }
        s
    }

    pub fn roc_csv(&self) -> String {
        let mut s = String::from("threshold,fpr,tpr\n");
        for p in &self.roc {
            let t = if p.threshold.is_infinite() {
                "inf".to_string()
            } else {
                format!("{:.6}", p.threshold)
            };
            let _ = writeln!(s, "{t},{:.6},{:.6}", p.fpr, p.tpr);
        }
        s
    }

    pub fn boxplot_csv(&self) -> String {
        let mut s = String::from("class,min,q1,median,q3,max\n");
        for row in &self.per_class {
            if let Some(q) = row.quartiles {
                let _ = writeln!(
                    s,
                    "{},{:.6},{:.6},{:.6},{:.6},{:.6}",
                    row.class_label, q.min, q.q1, q.median, q.q3, q.max
                );
            }
        }
        s
    }

    pub fn per_class_csv(&self) -> String {
        let mut s = String::from("class,total,correct,percent\n");
        for row in &self.per_class {
            let pct = row
                .percent_correct()
                .map_or(String::new(), |p| format!("{p:.2}"));
            let _ = writeln!(s, "{},{},{},{pct}", row.class_label, row.total, row.correct);
        }
        s
    }

    pub fn scores_csv(&self) -> String {
        let mut s = String::from("fold,cell,class,abnormal,score,predicted_class,n_predictions\n");
        for (f, c) in &self.scores {
            let _ = writeln!(
                s,
                "{f},{},{},{},{:.6},{},{}",
                c.cell_id,
                c.class_label,
                u8::from(c.abnormal),
                c.score,
                c.predicted_class + 1,
                c.n_predictions
            );
        }
        s
    }

    /// Write every report file into `dir` with the given stem; returns the paths written.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
        let files = [
            (format!("{stem}.txt"), self.to_text()),
            (format!("{stem}.kv"), self.to_kv()),
            (format!("{stem}_roc.csv"), self.roc_csv()),
            (format!("{stem}_boxplot.csv"), self.boxplot_csv()),
            (format!("{stem}_per_class.csv"), self.per_class_csv()),
            (format!("{stem}_scores.csv"), self.scores_csv()),
        ];
        let mut out = Vec::with_capacity(files.len());
        for (name, body) in files {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
            out.push(path);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn score(id: usize, label: u8, s: f64) -> CellScore {
        CellScore {
            cell_id: id,
            score: s,
            n_predictions: 1,
            class_label: label,
            abnormal: label >= 4,
            predicted_class: usize::from(label - 1),
        }
    }

    #[test]
    fn quartile_convention() {
        let q = quartiles(&[1.0, 0.5, 0.0, 0.75, 0.25]).unwrap();
        assert_eq!(
            (q.min, q.q1, q.median, q.q3, q.max),
            (0.0, 0.25, 0.5, 0.75, 1.0)
        );
        let q = quartiles(&[1.0, 2.0]).unwrap();
        assert_eq!(q.q1, 1.25);
        assert!(quartiles(&[]).is_none());
    }

    #[test]
    fn all_scored_one() {
        let scores: Vec<CellScore> = (1..=7u8)
            .flat_map(|l| (0..3).map(move |i| score(i, l, 1.0)))
            .collect();
        for row in per_class_report(&scores, THRESHOLD) {
            let expect = if row.class_label >= 4 { 3 } else { 0 };
            assert_eq!(row.correct, expect);
        }
    }

    #[test]
    fn overall_error() {
        assert_eq!(
            seven_class_overall_error(&[0, 1, 2], &[0, 1, 2]).unwrap(),
            0.0
        );
        let truth: Vec<usize> = (0..100).map(|i| i % 7).collect();
        let mut pred = truth.clone();
        pred[17] = (pred[17] + 1) % 7;
        assert_eq!(seven_class_overall_error(&pred, &truth).unwrap(), 1.0);
        assert!(seven_class_overall_error(&[], &[]).is_err());
    }

    #[test]
    fn report_files() {
        let f0 = vec![score(0, 1, 0.1), score(1, 5, 0.9), score(2, 2, 0.6)];
        let f1 = vec![score(3, 3, 0.2), score(4, 7, 0.8)];
        let report = EvaluationReport::build(vec![(0, f0), (1, f1)], 0, true).unwrap();
        assert_eq!(report.folds.len(), 2);
        assert_eq!(report.summary.overall_error.unwrap().mean, 0.0);
        let text = report.to_text();
        for col in ["Sens", "Spec", "Acc", "H-mean", "F-measure", "AUC"] {
            assert!(text.contains(col));
        }
        let dir = tempfile::tempdir().unwrap();
        let paths = report.write(dir.path(), "metrics").unwrap();
        assert_eq!(paths.len(), 6);
        let roc = std::fs::read_to_string(dir.path().join("metrics_roc.csv")).unwrap();
        assert!(roc.starts_with("threshold,fpr,tpr\ninf,0.000000,0.000000\n"));
    }
}
