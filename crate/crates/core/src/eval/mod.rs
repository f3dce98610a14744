pub mod metrics;
pub mod report;

pub use metrics::{per_class_f1, weighted_f1, ConfusionCounts, LanguageMetrics, MetricsReport, PerClassF1};
pub use report::{metrics_markdown, render_report, ComparisonRow, ComparisonTable, Format};
