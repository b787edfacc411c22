//! Classifier metrics with confidence half-widths, subgroup slices and
//! baseline-vs-adapted accuracy gaps.

pub mod confusion;
pub mod interval;
pub mod ranking;
pub mod report;

pub use confusion::{cohen_kappa, confusion, ConfusionMatrix, KappaWeighting, Rate, Rates, Undefined};
pub use interval::{binomial_halfwidth, bootstrap_halfwidth, BootstrapInterval};
pub use ranking::{average_precision, roc_auc};
pub use report::{gap_report, BootstrapSettings, GapReport, MetricValue, MetricsReport, ModelGap, ScoredSet, METRIC_ROWS};
