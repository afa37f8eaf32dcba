//! Report comparison and rendering (JSON, CSV, markdown).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::Mode;
use super::run::EvalReport;
use super::ExperimentError;
use crate::metrics::{Direction, MetricName};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub metric: MetricName,
    pub direction: Direction,
    pub baseline: f64,
    pub value: f64,
    pub delta: f64,
    /// `delta / |baseline|` in percent; absent for a zero baseline.
    pub relative_percent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline_mode: Mode,
    pub rows: Vec<DeltaRow>,
}

pub fn delta_row(metric: MetricName, baseline: f64, value: f64) -> DeltaRow {
    let delta = value - baseline;
    DeltaRow {
        metric,
        direction: metric.direction(),
        baseline,
        value,
        delta,
        relative_percent: (baseline != 0.0).then(|| 100.0 * delta / baseline.abs()),
    }
}

/// Aggregate deltas of `report` against `baseline`, for the metrics both
/// carry.
pub fn compare(report: &EvalReport, baseline: &EvalReport) -> Comparison {
    let rows = report
        .aggregates
        .iter()
        .filter_map(|m| {
            baseline
                .aggregate(m.name)
                .map(|b| delta_row(m.name, b, m.value))
        })
        .collect();
    Comparison {
        baseline_mode: baseline.mode,
        rows,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
    Markdown,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
            ReportFormat::Markdown => "md",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            other => Err(format!("unknown report format `{other}`")),
        }
    }
}

pub fn format_delta(delta: f64) -> String {
    format!("{delta:+.3}")
}

pub fn format_relative(relative_percent: Option<f64>) -> String {
    relative_percent.map_or_else(|| "n/a".to_string(), |r| format!("{r:+.1}%"))
}

/// Table with one row per metric and one column per report.
pub fn render_markdown(reports: &[&EvalReport]) -> String {
    let Some(first) = reports.first() else {
        return String::new();
    };
    let mut out = String::new();
    let _ = writeln!(out, "## {}", first.task);
    let _ = writeln!(out);
    let header: Vec<String> = reports.iter().map(|r| r.mode.to_string()).collect();
    let _ = writeln!(out, "| Metric | {} |", header.join(" | "));
    let _ = writeln!(out, "|---|{}", "---|".repeat(reports.len()));
    for m in &first.aggregates {
        let cells: Vec<String> = reports
            .iter()
            .map(|r| {
                r.aggregate(m.name)
                    .map_or("-".to_string(), |v| format!("{v:.3}"))
            })
            .collect();
        let _ = writeln!(
            out,
            "| {} {} | {} |",
            m.name,
            m.direction.arrow(),
            cells.join(" | ")
        );
    }
    out
}

/// Markdown for one report; with a comparison attached, the table shows
/// the baseline, this run, and the absolute and relative deltas.
pub fn render_report_markdown(report: &EvalReport) -> String {
    let Some(c) = &report.comparison else {
        return render_markdown(&[report]);
    };
    let mut out = String::new();
    let _ = writeln!(out, "## {}", report.task);
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "| Metric | {} | {} | Delta | Relative |",
        c.baseline_mode, report.mode
    );
    let _ = writeln!(out, "|---|---|---|---|---|");
    for r in &c.rows {
        let _ = writeln!(
            out,
            "| {} {} | {:.3} | {:.3} | {} | {} |",
            r.metric,
            r.direction.arrow(),
            r.baseline,
            r.value,
            format_delta(r.delta),
            format_relative(r.relative_percent)
        );
    }
    out
}

#[derive(Serialize)]
struct CsvRow<'a> {
    scope: &'a str,
    user_id: &'a str,
    profile_size: Option<usize>,
    metric: MetricName,
    direction: Direction,
    mode: Mode,
    value: f64,
    baseline: Option<f64>,
    delta: Option<f64>,
    relative_percent: Option<f64>,
}

/// Long-format CSV: aggregate rows, then one row per user and metric.
pub fn render_csv(report: &EvalReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for m in &report.aggregates {
        let d = report
            .comparison
            .as_ref()
            .and_then(|c| c.rows.iter().find(|r| r.metric == m.name));
        w.serialize(CsvRow {
            scope: "aggregate",
            user_id: "",
            profile_size: None,
            metric: m.name,
            direction: m.direction,
            mode: report.mode,
            value: m.value,
            baseline: d.map(|d| d.baseline),
            delta: d.map(|d| d.delta),
            relative_percent: d.and_then(|d| d.relative_percent),
        })
        .expect("in-memory write");
    }
    for u in &report.users {
        for (&metric, &value) in &u.metrics {
            w.serialize(CsvRow {
                scope: "user",
                user_id: &u.user_id,
                profile_size: Some(u.profile_size),
                metric,
                direction: metric.direction(),
                mode: u.mode,
                value,
                baseline: None,
                delta: None,
                relative_percent: None,
            })
            .expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8 csv")
}

pub fn render(report: &EvalReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => report.to_json(),
        ReportFormat::Csv => render_csv(report),
        ReportFormat::Markdown => render_report_markdown(report),
    }
}

/// Writes `{task}_{mode}.{ext}` under `dir` and returns its path.
pub fn emit_report(
    report: &EvalReport,
    format: ReportFormat,
    dir: &Path,
) -> Result<PathBuf, ExperimentError> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format!(
        "{}_{}.{}",
        report.task.slug(),
        report.mode,
        format.extension()
    ));
    std::fs::write(&path, render(report, format))?;
    Ok(path)
}

pub fn load_report(path: &Path) -> Result<EvalReport, ExperimentError> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delta_formatting() {
        let r = delta_row(MetricName::Accuracy, 0.502, 0.672);
        assert_eq!(format_delta(r.delta), "+0.170");
        assert_eq!(format_relative(r.relative_percent), "+33.9%");
        assert_eq!(
            format_relative(delta_row(MetricName::Mae, 0.0, 0.1).relative_percent),
            "n/a"
        );
    }

    #[test]
    fn format_names() {
        assert_eq!(
            "md".parse::<ReportFormat>().unwrap(),
            ReportFormat::Markdown
        );
        assert!("xml".parse::<ReportFormat>().is_err());
    }
}
