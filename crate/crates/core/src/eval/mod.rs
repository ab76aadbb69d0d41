//! Cross-validation folds, test-time score aggregation and the metric suite.

pub mod aggregate;
pub mod folds;
pub mod metrics;
pub mod report;
pub mod roc;

pub use aggregate::{
    aggregate_cell_score, score_cells, test_center, CellScore, ProbabilityModel, TestPlan,
};
pub use folds::{make_folds, FoldPlan};
pub use metrics::{
    binary_metrics, classify, mean_std, BinaryMetrics, Confusion, MeanStd, THRESHOLD,
};
pub use report::{
    per_class_report, quartiles, seven_class_overall_error, EvaluationReport, FoldResult, Summary,
};
pub use roc::{roc_auc, RocPoint};
