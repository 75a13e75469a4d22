use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use super::{BenchError, ConfigMetrics, MetricsReport};
use crate::agent::Scaffold;

pub const CSV_HEADER: &str =
    "config,tasks,success_rate,tokens_per_task,steps_per_task,tool_calls_per_step,fallback_rate";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(Self::Json),
            "csv" => Ok(Self::Csv),
            "markdown" | "md" | "markdown-table" => Ok(Self::Markdown),
            other => Err(format!("unknown report format `{other}`")),
        }
    }
}

impl ReportFormat {
    /// Guesses the format from a file extension, defaulting to JSON.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Self::Csv,
            Some("md") => Self::Markdown,
            _ => Self::Json,
        }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.2}")).unwrap_or_default()
}

fn render_csv(report: &MetricsReport) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for c in &report.configs {
        let _ = writeln!(
            out,
            "{},{},{},{:.2},{},{},{}",
            c.config,
            c.tasks.map(|n| n.to_string()).unwrap_or_default(),
            opt(c.success_rate),
            c.tokens_per_task,
            opt(c.steps_per_task),
            opt(c.tool_calls_per_step),
            opt(c.fallback_rate),
        );
    }
    out
}

/// `23600` → `23.6k`, `18480` → `18.48k`.
fn kilo(tokens: f64) -> String {
    let text = format!("{:.2}", tokens / 1000.0);
    let text = text.trim_end_matches('0').trim_end_matches('.');
    format!("{text}k")
}

fn percent(v: Option<f64>, decimals: usize) -> String {
    v.map(|x| format!("{x:.decimals$}%")).unwrap_or_else(|| "–".into())
}

fn number(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.2}")).unwrap_or_else(|| "–".into())
}

fn markdown_row(out: &mut String, c: &ConfigMetrics, reduction: Option<f64>) {
    let name = if c.gating {
        format!("{} + gate", c.scaffold.title())
    } else {
        c.scaffold.title().to_string()
    };
    let _ = writeln!(
        out,
        "| {} | {} | {} | {} | {} | {} | {} |",
        name,
        percent(c.success_rate, 2),
        kilo(c.tokens_per_task),
        number(c.steps_per_task),
        number(c.tool_calls_per_step),
        percent(c.fallback_rate, 1),
        reduction.map(|r| format!("{r:.1}%")).unwrap_or_default(),
    );
}

/// Baseline rows followed by their gated counterparts, scaffold by scaffold.
fn render_markdown(report: &MetricsReport) -> String {
    let mut out = String::new();
    out.push_str("| Configuration | Success Rate | Tokens/Task | Steps/Task | Tool Calls/Step | Fallback Rate | Token Reduction |\n");
    out.push_str("|---|---:|---:|---:|---:|---:|---:|\n");
    let mut scaffolds: Vec<Scaffold> = Vec::new();
    for c in &report.configs {
        if !scaffolds.contains(&c.scaffold) {
            scaffolds.push(c.scaffold);
        }
    }
    for scaffold in scaffolds {
        for gating in [false, true] {
            for c in report
                .configs
                .iter()
                .filter(|c| c.scaffold == scaffold && c.gating == gating)
            {
                let reduction = gating
                    .then(|| report.ab_row(scaffold).map(|r| r.reduction_percent))
                    .flatten();
                markdown_row(&mut out, c, reduction);
            }
        }
    }
    if let Some(max) = report.max_reduction {
        let _ = writeln!(out, "| Max reduction | | | | | | {max:.1}% |");
    }
    let _ = writeln!(out, "\nTokens counted from: {:?}.", report.token_source);
    out
}

pub fn render_report(report: &MetricsReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => serde_json::to_string_pretty(report).expect("report serializes") + "\n",
        ReportFormat::Csv => render_csv(report),
        ReportFormat::Markdown => render_markdown(report),
    }
}

pub fn emit_report(report: &MetricsReport, format: ReportFormat, path: impl AsRef<Path>) -> Result<(), BenchError> {
    let path = path.as_ref();
    std::fs::write(path, render_report(report, format))
        .map_err(|e| BenchError::Io(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{fixture_report, Table2Fixture};

    fn recorded() -> MetricsReport {
        fixture_report(
            &Table2Fixture::from_json_str(
                r#"{"rows": [
                {"scaffold": "cot-zero", "baseline_tokens_per_task": 23600, "gated_tokens_per_task": 18480,
                 "baseline_success_rate": 77.35, "gated_success_rate": 77.03},
                {"scaffold": "cot-few", "baseline_tokens_per_task": 25800, "gated_tokens_per_task": 19450}
            ]}"#,
            )
            .unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn kilo_formatting() {
        assert_eq!(kilo(23600.0), "23.6k");
        assert_eq!(kilo(18480.0), "18.48k");
        assert_eq!(kilo(25000.0), "25k");
    }

    #[test]
    fn json_round_trip() {
        let report = recorded();
        let text = render_report(&report, ReportFormat::Json);
        let back: MetricsReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn csv_header_is_fixed() {
        let text = render_report(&recorded(), ReportFormat::Csv);
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(CSV_HEADER));
        assert_eq!(lines.next(), Some("cot-zero,,77.35,23600.00,,,"));
        assert_eq!(text.lines().count(), 5);
    }

    #[test]
    fn markdown_interleaves_rows() {
        let text = render_report(&recorded(), ReportFormat::Markdown);
        let rows: Vec<&str> = text.lines().filter(|l| l.starts_with("| ")).collect();
        assert!(rows[1].starts_with("| CoT Zero-Shot | 77.35% | 23.6k"));
        assert!(rows[2].starts_with("| CoT Zero-Shot + gate | 77.03% | 18.48k"));
        assert!(rows[2].ends_with("| 21.7% |"));
        assert!(rows[3].starts_with("| CoT Few-Shot |"));
        assert_eq!(rows.last().unwrap(), &"| Max reduction | | | | | | 24.6% |");
    }

    #[test]
    fn format_parsing() {
        assert_eq!("csv".parse::<ReportFormat>().unwrap(), ReportFormat::Csv);
        assert_eq!("markdown-table".parse::<ReportFormat>().unwrap(), ReportFormat::Markdown);
        assert!("xml".parse::<ReportFormat>().is_err());
        assert_eq!(ReportFormat::from_path(Path::new("r.md")), ReportFormat::Markdown);
    }
}
