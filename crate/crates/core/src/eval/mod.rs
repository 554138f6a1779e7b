//! Accuracy metrics, bootstrap statistics, k-shot aggregation and report
//! rendering.

mod metrics;
mod report;

pub use metrics::{
    aggregate_kshot, bootstrap_accuracy, bootstrap_accuracy_serial, topk_accuracy, topk_hits, BootstrapConfig,
    BootstrapStats, StdKind,
};
pub use report::{format_cell, render_report, EvalReport, MetricRow, ReportFormat, StdSource};
