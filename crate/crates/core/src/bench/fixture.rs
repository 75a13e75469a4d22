use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BenchError, ConfigMetrics, MetricsReport, ReportMode};
use crate::agent::{Scaffold, SessionConfig};
use crate::tokens::TokenSource;

/// Recorded per-scaffold totals replayed through the metrics pipeline
/// without running any model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table2Fixture {
    pub rows: Vec<Table2Row>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table2Row {
    pub scaffold: Scaffold,
    pub baseline_tokens_per_task: f64,
    pub gated_tokens_per_task: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_success_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gated_success_rate: Option<f64>,
}

impl Table2Fixture {
    pub fn from_json_str(text: &str) -> Result<Self, BenchError> {
        serde_json::from_str(text).map_err(|e| BenchError::Parse {
            what: "fixture",
            message: e.to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BenchError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| BenchError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }
}

fn fixture_config(scaffold: Scaffold, gating: bool, tokens: f64, success: Option<f64>) -> ConfigMetrics {
    ConfigMetrics {
        config: SessionConfig::new(scaffold, gating).label(),
        scaffold,
        gating,
        tasks: None,
        success_rate: success,
        tokens_per_task: tokens,
        tokens_per_task_excluding_classification: None,
        tokens_per_successful_task: None,
        steps_per_task: None,
        tool_calls_per_step: None,
        fallback_rate: None,
    }
}

pub fn fixture_report(fixture: &Table2Fixture) -> Result<MetricsReport, BenchError> {
    let mut seen = Vec::new();
    let mut configs = Vec::with_capacity(fixture.rows.len() * 2);
    for row in &fixture.rows {
        if seen.contains(&row.scaffold) {
            return Err(BenchError::Config(format!("scaffold `{}` listed twice", row.scaffold)));
        }
        seen.push(row.scaffold);
        for rate in [row.baseline_success_rate, row.gated_success_rate].into_iter().flatten() {
            if !(0.0..=100.0).contains(&rate) {
                return Err(BenchError::Config(format!("success rate {rate} outside [0, 100]")));
            }
        }
        configs.push(fixture_config(
            row.scaffold,
            false,
            row.baseline_tokens_per_task,
            row.baseline_success_rate,
        ));
        configs.push(fixture_config(
            row.scaffold,
            true,
            row.gated_tokens_per_task,
            row.gated_success_rate,
        ));
    }
    MetricsReport::from_configs(ReportMode::Fixture, TokenSource::Endpoint, configs)
}
