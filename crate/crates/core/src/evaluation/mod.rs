//! Threshold-free metrics, histograms and the ablation harness.

mod ablation;
mod metrics;
mod report;

pub use ablation::{run_ablation, AblationReport, AblationRow, AblationSpec, AblationVariant};
pub use metrics::{auroc, histogram, labeled_scores, roc_curve, Histogram, RocCurve};
pub use report::{evaluate, MetricsReport, DEFAULT_BINS};
