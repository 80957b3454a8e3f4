//! Classification, ranking, survival and decision-curve metrics.

mod clinical;
mod confusion;
mod ranking;
mod report;
mod survival;

pub use clinical::{brier, dca_curve, default_dca_grid, net_benefit, DcaPoint};
pub use confusion::{
    classification_metrics, cohen_kappa, confusion, mcc, qwk, Averaging, ClassificationMetrics, ConfusionMatrix,
    Score,
};
pub use ranking::{
    auc, average_ranks, delong_test, delong_variance, pr_auc, roc_auc, spearman, youden_threshold, DeLong, PrCurve,
    PrPoint, RocCurve, RocPoint, Youden,
};
pub use report::{build_report, summarize_reports, MeanStd, MetricsReport, PredictionRecord};
pub use survival::c_index;
