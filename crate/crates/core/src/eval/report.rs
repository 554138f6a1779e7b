use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::metrics::{BootstrapConfig, StdKind};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StdSource {
    /// Spread over bootstrap resamples of one test set.
    Bootstrap,
    /// Spread over k-shot training samples.
    KshotSeeds,
}

/// One method/setting pair. Accuracies are percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub method: String,
    /// `full` or `<k>-shot`.
    pub setting: String,
    pub top1_mean: f64,
    pub top1_std: f64,
    pub top3_mean: f64,
    pub top3_std: f64,
    pub std_source: StdSource,
    /// Mean per-seed bootstrap std, kept apart from the across-seed std.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bootstrap_top1_std: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bootstrap_top3_std: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_seed_top1: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub experiment_id: String,
    pub rows: Vec<MetricRow>,
    pub bootstrap: BootstrapConfig,
    pub kshot_std: StdKind,
    /// Stage name to run-manifest or artifact hash.
    #[serde(default)]
    pub provenance: BTreeMap<String, String>,
}

impl EvalReport {
    pub fn validate(&self) -> Result<()> {
        for r in &self.rows {
            for m in [r.top1_mean, r.top3_mean] {
                if !(0.0..=100.0).contains(&m) {
                    return Err(Error::invalid(format!("{} {}: mean {m} outside [0, 100]", r.method, r.setting)));
                }
            }
            for s in [r.top1_std, r.top3_std] {
                if !(s >= 0.0) {
                    return Err(Error::invalid(format!("{} {}: negative std", r.method, r.setting)));
                }
            }
        }
        Ok(())
    }

    pub fn row(&self, method: &str, setting: &str) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.method == method && r.setting == setting)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    TableText,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table-text" | "table" | "text" => Ok(ReportFormat::TableText),
            "json" => Ok(ReportFormat::Json),
            _ => Err(Error::Config(format!("unknown report format {s:?}"))),
        }
    }
}

/// `"75.77 (2.67)"`.
pub fn format_cell(mean: f64, std: f64) -> String {
    format!("{mean:.2} ({std:.2})")
}

pub fn render_report(report: &EvalReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => serde_json::to_string_pretty(report).expect("report serializes") + "\n",
        ReportFormat::TableText => render_table(report),
    }
}

fn render_table(report: &EvalReport) -> String {
    let header = ["Method", "Setting", "Top-1", "Top-3"];
    let cells: Vec<[String; 4]> = report
        .rows
        .iter()
        .map(|r| {
            [
                r.method.clone(),
                r.setting.clone(),
                format_cell(r.top1_mean, r.top1_std),
                format_cell(r.top3_mean, r.top3_std),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    writeln!(out, "{}", report.experiment_id).unwrap();
    let line = |out: &mut String, cols: [&str; 4]| {
        let parts: Vec<String> = cols
            .iter()
            .zip(widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        writeln!(out, "{}", parts.join("  ").trim_end()).unwrap();
    };
    line(&mut out, header);
    for row in &cells {
        line(&mut out, [&row[0], &row[1], &row[2], &row[3]]);
    }
    out
}
