//! Confusion-matrix metrics, fragment to subject aggregation, ROC curves
//! with run-to-run bands, and summary reports.

mod metrics;
mod report;
mod roc;

pub use metrics::{
    aggregate_subject, group_by_subject, metrics, ConfusionCounts, Level, Metrics, MetricsRecord, SubjectPrediction,
    SubjectScores,
};
pub use report::{mean_std, report, LevelSummary, MeanStd, Summary};
pub use roc::{roc, roc_bands, RocBands, RocCurve, ROC_GRID_POINTS};
