//! A/B benchmarking of gated versus ungated runs.

mod fixture;
mod report;

use std::collections::HashSet;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{check_success, Agent, Scaffold, SessionConfig, TaskSpec, Trajectory};
use crate::registry::ToolRegistry;
use crate::tokens::{self, LedgerError, TokenLedger, TokenSource};

pub use fixture::{fixture_report, Table2Fixture, Table2Row};
pub use report::{emit_report, render_report, ReportFormat, CSV_HEADER};

#[derive(Debug, Error, PartialEq)]
pub enum BenchError {
    #[error("failed to parse {what}: {message}")]
    Parse { what: &'static str, message: String },
    #[error("duplicate task id `{0}`")]
    DuplicateTask(String),
    #[error("task `{task}` requires unknown tool `{tool}`")]
    UnknownTool { task: String, tool: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

pub fn parse_corpus(text: &str, registry: &ToolRegistry) -> Result<Vec<TaskSpec>, BenchError> {
    let tasks: Vec<TaskSpec> = serde_json::from_str(text).map_err(|e| BenchError::Parse {
        what: "corpus",
        message: e.to_string(),
    })?;
    let mut ids = HashSet::new();
    for task in &tasks {
        if !ids.insert(task.id.as_str()) {
            return Err(BenchError::DuplicateTask(task.id.clone()));
        }
        if let Some(tool) = task.required_tools.iter().find(|t| registry.tool(t).is_none()) {
            return Err(BenchError::UnknownTool {
                task: task.id.clone(),
                tool: tool.clone(),
            });
        }
    }
    Ok(tasks)
}

pub fn load_corpus(path: impl AsRef<Path>, registry: &ToolRegistry) -> Result<Vec<TaskSpec>, BenchError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| BenchError::Io(format!("{}: {e}", path.display())))?;
    parse_corpus(&text, registry)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportMode {
    Executed,
    Fixture,
}

/// Aggregates for one configuration. Fields a fixture cannot supply are
/// absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigMetrics {
    pub config: String,
    pub scaffold: Scaffold,
    pub gating: bool,
    pub tasks: Option<usize>,
    pub success_rate: Option<f64>,
    /// Mean over all tasks, classification call included.
    pub tokens_per_task: f64,
    pub tokens_per_task_excluding_classification: Option<f64>,
    /// Mean over successful tasks only.
    pub tokens_per_successful_task: Option<f64>,
    pub steps_per_task: Option<f64>,
    pub tool_calls_per_step: Option<f64>,
    pub fallback_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbRow {
    pub scaffold: Scaffold,
    pub baseline_tokens_per_task: f64,
    pub gated_tokens_per_task: f64,
    pub reduction_percent: f64,
    pub success_rate_delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mode: ReportMode,
    pub token_source: TokenSource,
    pub configs: Vec<ConfigMetrics>,
    pub ab: Vec<AbRow>,
    pub max_reduction: Option<f64>,
}

impl MetricsReport {
    pub fn config(&self, label: &str) -> Option<&ConfigMetrics> {
        self.configs.iter().find(|c| c.config == label)
    }

    pub fn ab_row(&self, scaffold: Scaffold) -> Option<&AbRow> {
        self.ab.iter().find(|r| r.scaffold == scaffold)
    }

    pub(crate) fn from_configs(
        mode: ReportMode,
        token_source: TokenSource,
        configs: Vec<ConfigMetrics>,
    ) -> Result<Self, BenchError> {
        let mut ab = Vec::new();
        let mut seen = Vec::new();
        for c in &configs {
            if seen.contains(&c.scaffold) {
                continue;
            }
            seen.push(c.scaffold);
            let find = |gating| configs.iter().find(|x| x.scaffold == c.scaffold && x.gating == gating);
            if let (Some(base), Some(gated)) = (find(false), find(true)) {
                ab.push(AbRow {
                    scaffold: c.scaffold,
                    baseline_tokens_per_task: base.tokens_per_task,
                    gated_tokens_per_task: gated.tokens_per_task,
                    reduction_percent: tokens::reduction_percent(
                        base.tokens_per_task,
                        gated.tokens_per_task,
                    )?,
                    success_rate_delta: base
                        .success_rate
                        .zip(gated.success_rate)
                        .map(|(b, g)| g - b),
                });
            }
        }
        let max_reduction = ab
            .iter()
            .map(|r| r.reduction_percent)
            .max_by(f64::total_cmp);
        Ok(Self {
            mode,
            token_source,
            configs,
            ab,
            max_reduction,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BenchOptions {
    pub workers: usize,
    pub token_source: TokenSource,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            workers: 1,
            token_source: TokenSource::Desk,
        }
    }
}

/// One executed (task, configuration) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub config: String,
    pub trajectory: Trajectory,
    pub ledger: TokenLedger,
    pub success: bool,
}

#[derive(Debug, Clone)]
pub struct BenchRun {
    pub results: Vec<TaskResult>,
    pub report: MetricsReport,
}

impl BenchRun {
    pub fn results_for<'a>(&'a self, config: &'a str) -> impl Iterator<Item = &'a TaskResult> + 'a {
        self.results.iter().filter(move |r| r.config == config)
    }
}

fn mean(sum: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn aggregate(config: &SessionConfig, results: &[&TaskResult]) -> ConfigMetrics {
    let n = results.len();
    let successes = results.iter().filter(|r| r.success).count();
    let total_tokens: u64 = results.iter().map(|r| r.ledger.total).sum();
    let classification: u64 = results.iter().map(|r| r.ledger.classification.total()).sum();
    let successful_tokens: u64 = results
        .iter()
        .filter(|r| r.success)
        .map(|r| r.ledger.total)
        .sum();
    let steps: usize = results.iter().map(|r| r.trajectory.steps.len()).sum();
    let calls: usize = results.iter().map(|r| r.trajectory.tool_call_count()).sum();
    let fallbacks = results.iter().filter(|r| r.trajectory.fallback_used()).count();
    ConfigMetrics {
        config: config.label(),
        scaffold: config.scaffold,
        gating: config.gating,
        tasks: Some(n),
        success_rate: Some(100.0 * mean(successes as f64, n)),
        tokens_per_task: mean(total_tokens as f64, n),
        tokens_per_task_excluding_classification: Some(mean(
            (total_tokens - classification) as f64,
            n,
        )),
        tokens_per_successful_task: (successes > 0)
            .then(|| mean(successful_tokens as f64, successes)),
        steps_per_task: Some(mean(steps as f64, n)),
        tool_calls_per_step: Some(mean(calls as f64, steps)),
        fallback_rate: Some(100.0 * mean(fallbacks as f64, n)),
    }
}

/// Runs every (task, configuration) pair on a pool of `workers` threads and
/// aggregates the results. Output does not depend on the worker count.
pub fn run_benchmark(
    corpus: &[TaskSpec],
    configs: &[SessionConfig],
    agent: &Agent,
    options: BenchOptions,
) -> Result<BenchRun, BenchError> {
    if configs.is_empty() {
        return Err(BenchError::Config("no configurations to run".into()));
    }
    let mut labels = HashSet::new();
    for c in configs {
        if !labels.insert(c.label()) {
            return Err(BenchError::Config(format!("configuration `{}` given twice", c.label())));
        }
        if c.max_steps == 0 {
            return Err(BenchError::Config("step budget must be at least 1".into()));
        }
    }

    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.sort_by(|&a, &b| corpus[a].id.cmp(&corpus[b].id));
    let pairs: Vec<(&SessionConfig, &TaskSpec)> = configs
        .iter()
        .flat_map(|c| order.iter().map(move |&i| (c, &corpus[i])))
        .collect();

    let execute = |(config, task): &(&SessionConfig, &TaskSpec)| {
        let trajectory = agent.run_task(task, config);
        let ledger = TokenLedger::from_trajectory(&trajectory, options.token_source)?;
        debug_assert!(ledger.is_consistent());
        let success = check_success(&trajectory, task);
        Ok::<_, BenchError>(TaskResult {
            config: config.label(),
            trajectory,
            ledger,
            success,
        })
    };
    let results: Vec<TaskResult> = if options.workers <= 1 {
        pairs.iter().map(execute).collect::<Result<_, _>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(options.workers)
            .build()
            .map_err(|e| BenchError::Config(format!("worker pool: {e}")))?;
        pool.install(|| pairs.par_iter().map(execute).collect::<Result<_, _>>())?
    };

    let metrics = configs
        .iter()
        .map(|c| {
            let label = c.label();
            let rows: Vec<&TaskResult> = results.iter().filter(|r| r.config == label).collect();
            aggregate(c, &rows)
        })
        .collect();
    let report = MetricsReport::from_configs(ReportMode::Executed, options.token_source, metrics)?;
    Ok(BenchRun { results, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::ScriptedBackend;
    use crate::gate::{Classifier, Gate};
    use crate::intent::IntentMap;
    use crate::registry::{RegistryBuilder, ToolSpec};
    use std::sync::Arc;

    fn registry() -> Arc<ToolRegistry> {
        let mut b = RegistryBuilder::new();
        b.register_library("map_apis", "", vec![ToolSpec::without_parameters("plot_images", "Plot")])
            .unwrap();
        b.register_library("wiki_apis", "", vec![ToolSpec::without_parameters("wiki_search", "Search")])
            .unwrap();
        Arc::new(b.seal())
    }

    #[test]
    fn corpus_validation() {
        let reg = registry();
        let ok = r#"[{"id": "a", "prompt": "p", "required_tools": ["plot_images"]},
                     {"id": "b", "prompt": "q"}]"#;
        assert_eq!(parse_corpus(ok, &reg).unwrap().len(), 2);
        assert!(parse_corpus("[]", &reg).unwrap().is_empty());
        let dup = r#"[{"id": "a", "prompt": "p"}, {"id": "a", "prompt": "q"}]"#;
        assert_eq!(parse_corpus(dup, &reg).unwrap_err(), BenchError::DuplicateTask("a".into()));
        let unknown = r#"[{"id": "a", "prompt": "p", "required_tools": ["nope"]}]"#;
        assert!(matches!(parse_corpus(unknown, &reg), Err(BenchError::UnknownTool { .. })));
        assert!(matches!(parse_corpus("{", &reg), Err(BenchError::Parse { .. })));
    }

    #[test]
    fn single_task_single_config() {
        let reg = registry();
        let map = Arc::new(
            IntentMap::from_json_str(r#"{"intents": [{"id": "plot", "libraries": ["map_apis"]}]}"#).unwrap(),
        );
        let script = Arc::new(
            ScriptedBackend::from_json_str(
                r#"[{"task": "a", "step": 0, "respond": {"tool_calls": [{"name": "plot_images"}]}},
                    {"task": "a", "step": 1, "respond": {"content": "ok"}}]"#,
            )
            .unwrap(),
        );
        let agent = Agent::new(Gate::new(reg.clone(), map).unwrap(), script, Classifier::Rule);
        let corpus = parse_corpus(r#"[{"id": "a", "prompt": "p", "required_tools": ["plot_images"]}]"#, &reg).unwrap();
        let run = run_benchmark(
            &corpus,
            &[SessionConfig::new(Scaffold::CotZero, false)],
            &agent,
            BenchOptions::default(),
        )
        .unwrap();
        let report = &run.report;
        assert_eq!(report.configs.len(), 1);
        assert!(report.ab.is_empty());
        assert_eq!(report.max_reduction, None);
        let c = &report.configs[0];
        assert_eq!(c.success_rate, Some(100.0));
        assert_eq!(c.steps_per_task, Some(2.0));
        assert_eq!(c.tool_calls_per_step, Some(0.5));
        assert_eq!(c.fallback_rate, Some(0.0));
        assert_eq!(c.tokens_per_task, run.results[0].ledger.total as f64);
    }

    #[test]
    fn config_errors() {
        let reg = registry();
        let map = Arc::new(
            IntentMap::from_json_str(r#"{"intents": [{"id": "plot", "libraries": ["map_apis"]}]}"#).unwrap(),
        );
        let agent = Agent::new(
            Gate::new(reg, map).unwrap(),
            Arc::new(ScriptedBackend::default()),
            Classifier::Rule,
        );
        let c = SessionConfig::new(Scaffold::CotZero, false);
        assert!(matches!(
            run_benchmark(&[], &[c.clone(), c.clone()], &agent, BenchOptions::default()),
            Err(BenchError::Config(_))
        ));
        assert!(matches!(
            run_benchmark(&[], &[], &agent, BenchOptions::default()),
            Err(BenchError::Config(_))
        ));
        let mut zero = c;
        zero.max_steps = 0;
        assert!(matches!(
            run_benchmark(&[], &[zero], &agent, BenchOptions::default()),
            Err(BenchError::Config(_))
        ));
    }
}
