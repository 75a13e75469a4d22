//! The compositional agent loop.
//!
//! A task runs as: optional gate decision, then planner steps over the
//! offered schema until a terminal answer, the step budget, or a backend
//! failure. A step may carry several tool calls; they are all dispatched and
//! their results appended, in call order, before the next request.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::backend::{
    ChatMessage, CompletionBackend, CompletionRequest, Reply, RequestTag, ToolCall, Usage,
};
use crate::gate::{
    expand_toolset, Classifier, Gate, GateDecision, GateError, ToolsetState, SENTINEL_TOOL_NAME,
};
use crate::registry::{ToolRegistry, ToolSchema};
use crate::tokens;

pub const DEFAULT_MAX_STEPS: usize = 10;
pub const DEFAULT_MODEL: &str = "gpt-4-0125-preview";

const COT_SCAFFOLD: &str = "\
You are a planning assistant that completes the user's task by calling the provided tools. \
Reason about the task step by step before acting. \
When several tools are needed and do not depend on each other's results, call them together in a single response. \
When the task is complete, reply with the final answer and do not call any tool.";

const REACT_SCAFFOLD: &str = "\
You are a planning assistant that completes the user's task by calling the provided tools. \
Work in a loop: write a short Thought about what to do next, then act by calling one or more tools, \
then read their results as Observations. \
When several tools are needed and do not depend on each other's results, call them together in a single response. \
When the task is complete, reply with the final answer and do not call any tool.";

pub const DEFAULT_EXEMPLARS: &str = "\
Example 1
User: Show Sentinel-2 tiles over Lake Tahoe from 2021.
Assistant: call load_dataset{\"name\":\"sentinel2\"}, filter_by_region{\"region\":\"Lake Tahoe\"}, filter_by_date{\"year\":2021}, plot_on_map{}
Assistant: The 2021 Sentinel-2 tiles over Lake Tahoe are plotted on the map.

Example 2
User: Open the documentation page for the object detector.
Assistant: call web_search{\"query\":\"object detector documentation\"}, open_page{\"rank\":1}
Assistant: The documentation page is open.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scaffold {
    CotZero,
    CotFew,
    ReactZero,
    ReactFew,
}

impl Scaffold {
    pub const ALL: [Scaffold; 4] = [
        Scaffold::CotZero,
        Scaffold::CotFew,
        Scaffold::ReactZero,
        Scaffold::ReactFew,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scaffold::CotZero => "cot-zero",
            Scaffold::CotFew => "cot-few",
            Scaffold::ReactZero => "react-zero",
            Scaffold::ReactFew => "react-few",
        }
    }

    /// Row label in reports.
    pub fn title(self) -> &'static str {
        match self {
            Scaffold::CotZero => "CoT Zero-Shot",
            Scaffold::CotFew => "CoT Few-Shot",
            Scaffold::ReactZero => "ReAct Zero-Shot",
            Scaffold::ReactFew => "ReAct Few-Shot",
        }
    }

    pub fn is_few_shot(self) -> bool {
        matches!(self, Scaffold::CotFew | Scaffold::ReactFew)
    }

    pub fn is_react(self) -> bool {
        matches!(self, Scaffold::ReactZero | Scaffold::ReactFew)
    }

    pub fn system_prompt(self, exemplars: &str) -> String {
        let base = if self.is_react() { REACT_SCAFFOLD } else { COT_SCAFFOLD };
        if self.is_few_shot() {
            format!("{base}\n\nExamples:\n{exemplars}")
        } else {
            base.to_string()
        }
    }
}

impl fmt::Display for Scaffold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scaffold {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scaffold::ALL
            .into_iter()
            .find(|sc| sc.as_str() == s)
            .ok_or_else(|| format!("unknown scaffold `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionConfig {
    pub scaffold: Scaffold,
    pub gating: bool,
    pub max_steps: usize,
    pub temperature: f64,
    pub model: String,
    /// Few-shot exemplar block; [`DEFAULT_EXEMPLARS`] when unset.
    pub exemplars: Option<Arc<str>>,
    /// Run the tool calls of one step on separate threads.
    pub parallel_tools: bool,
}

impl SessionConfig {
    pub fn new(scaffold: Scaffold, gating: bool) -> Self {
        Self {
            scaffold,
            gating,
            max_steps: DEFAULT_MAX_STEPS,
            temperature: 0.0,
            model: DEFAULT_MODEL.to_string(),
            exemplars: None,
            parallel_tools: false,
        }
    }

    /// `cot-zero`, or `cot-zero+gate` when gating is on.
    pub fn label(&self) -> String {
        if self.gating {
            format!("{}+gate", self.scaffold)
        } else {
            self.scaffold.to_string()
        }
    }

    pub fn system_prompt(&self) -> String {
        self.scaffold
            .system_prompt(self.exemplars.as_deref().unwrap_or(DEFAULT_EXEMPLARS))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: String,
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intent_truth: Option<String>,
    #[serde(default)]
    pub required_tools: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_answer: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCallRecord {
    pub id: String,
    pub name: String,
    pub arguments: Value,
    pub result: String,
    /// The call reached a handler (or expanded the toolset) and succeeded.
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub index: usize,
    pub offered_schema_origin: BTreeSet<String>,
    /// The offered schema carried the fallback sentinel.
    pub offered_gated: bool,
    pub offered_tools: usize,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint_usage: Option<Usage>,
    pub tool_calls: Vec<ToolCallRecord>,
    pub terminal: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    /// A terminal answer was reached.
    Success,
    Failure,
    BudgetExceeded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: String,
    pub scaffold: Scaffold,
    pub gating: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision: Option<GateDecision>,
    pub steps: Vec<StepRecord>,
    pub outcome: Outcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl Trajectory {
    pub fn tool_call_count(&self) -> usize {
        self.steps.iter().map(|s| s.tool_calls.len()).sum()
    }

    pub fn sentinel_calls(&self) -> usize {
        self.steps
            .iter()
            .flat_map(|s| &s.tool_calls)
            .filter(|c| c.name == SENTINEL_TOOL_NAME)
            .count()
    }

    pub fn fallback_used(&self) -> bool {
        self.decision.as_ref().is_some_and(|d| d.fallback_used)
    }

    /// Flattened (name, arguments) sequence of every tool call.
    pub fn call_sequence(&self) -> Vec<(&str, &Value)> {
        self.steps
            .iter()
            .flat_map(|s| &s.tool_calls)
            .map(|c| (c.name.as_str(), &c.arguments))
            .collect()
    }

    /// Desk tokens over all steps plus the classification call.
    pub fn desk_tokens(&self) -> u64 {
        self.classification_tokens()
            + self
                .steps
                .iter()
                .map(|s| s.prompt_tokens + s.completion_tokens)
                .sum::<u64>()
    }

    pub fn classification_tokens(&self) -> u64 {
        self.decision
            .as_ref()
            .map_or(0, GateDecision::classification_tokens)
    }
}

/// Executes a named tool. Implementations must tolerate concurrent calls.
pub trait ToolHandler: Send + Sync {
    fn call(&self, name: &str, arguments: &Value) -> Result<String, String>;
}

/// Answers every call with `<name>-ok`.
#[derive(Debug, Clone, Copy, Default)]
pub struct EchoHandler;

impl ToolHandler for EchoHandler {
    fn call(&self, name: &str, _arguments: &Value) -> Result<String, String> {
        Ok(format!("{name}-ok"))
    }
}

/// Routes calls by tool name, with an optional catch-all.
#[derive(Default, Clone)]
pub struct HandlerMap {
    handlers: HashMap<String, Arc<dyn ToolHandler>>,
    fallback: Option<Arc<dyn ToolHandler>>,
}

impl HandlerMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_fallback(fallback: Arc<dyn ToolHandler>) -> Self {
        Self {
            handlers: HashMap::new(),
            fallback: Some(fallback),
        }
    }

    pub fn insert(&mut self, tool: impl Into<String>, handler: Arc<dyn ToolHandler>) -> &mut Self {
        self.handlers.insert(tool.into(), handler);
        self
    }
}

impl ToolHandler for HandlerMap {
    fn call(&self, name: &str, arguments: &Value) -> Result<String, String> {
        match self.handlers.get(name).or(self.fallback.as_ref()) {
            Some(h) => h.call(name, arguments),
            None => Err(format!("no handler registered for `{name}`")),
        }
    }
}

pub const EXPANDED_RESULT: &str = "full toolset enabled; every tool is offered from the next step";

enum Route<'a> {
    Done(String, bool),
    Handler(&'a ToolCall),
}

/// Dispatches one step's calls. Results follow call order. Tools outside
/// `offered` are refused, and only the sentinel changes the toolset.
pub fn dispatch_tool_calls(
    calls: &[ToolCall],
    offered: &ToolSchema,
    toolset: &mut ToolsetState,
    registry: &ToolRegistry,
    handlers: &dyn ToolHandler,
    parallel: bool,
) -> Vec<ToolCallRecord> {
    let routes: Vec<Route> = calls
        .iter()
        .map(|call| {
            if call.name == SENTINEL_TOOL_NAME {
                return match expand_toolset(toolset, registry) {
                    Ok(_) => Route::Done(EXPANDED_RESULT.to_string(), true),
                    Err(GateError::AlreadyExpanded) => {
                        Route::Done("error: the full toolset is already enabled".into(), false)
                    }
                    Err(e) => Route::Done(format!("error: {e}"), false),
                };
            }
            if !offered.contains(&call.name) {
                return Route::Done(format!("error: tool not available: {}", call.name), false);
            }
            if !call.arguments.is_object() {
                return Route::Done(
                    format!("error: malformed arguments for {}: expected a JSON object", call.name),
                    false,
                );
            }
            Route::Handler(call)
        })
        .collect();

    let run = |call: &ToolCall| match handlers.call(&call.name, &call.arguments) {
        Ok(text) => (text, true),
        Err(e) => (format!("error: {e}"), false),
    };
    let handled: Vec<Option<(String, bool)>> = if parallel && routes.len() > 1 {
        std::thread::scope(|s| {
            let joins: Vec<_> = routes
                .iter()
                .map(|r| match r {
                    Route::Handler(call) => Some(s.spawn(move || run(call))),
                    Route::Done(..) => None,
                })
                .collect();
            joins
                .into_iter()
                .map(|j| j.map(|h| h.join().expect("tool handler panicked")))
                .collect()
        })
    } else {
        routes
            .iter()
            .map(|r| match r {
                Route::Handler(call) => Some(run(call)),
                Route::Done(..) => None,
            })
            .collect()
    };

    calls
        .iter()
        .zip(routes)
        .zip(handled)
        .map(|((call, route), handled)| {
            let (result, ok) = match (route, handled) {
                (Route::Done(text, ok), _) => (text, ok),
                (Route::Handler(_), Some(outcome)) => outcome,
                (Route::Handler(_), None) => unreachable!(),
            };
            ToolCallRecord {
                id: call.id.clone(),
                name: call.name.clone(),
                arguments: call.arguments.clone(),
                result,
                ok,
            }
        })
        .collect()
}

/// Success means a terminal answer, every required tool executed
/// successfully, and the expected answer (if any) inside the final text.
pub fn check_success(trajectory: &Trajectory, task: &TaskSpec) -> bool {
    if trajectory.outcome != Outcome::Success {
        return false;
    }
    let executed: BTreeSet<&str> = trajectory
        .steps
        .iter()
        .flat_map(|s| &s.tool_calls)
        .filter(|c| c.ok)
        .map(|c| c.name.as_str())
        .collect();
    let covered = task
        .required_tools
        .iter()
        .all(|t| executed.contains(t.as_str()));
    let answered = match (&task.expected_answer, &trajectory.answer) {
        (None, _) => true,
        (Some(expected), Some(answer)) => answer.contains(expected.as_str()),
        (Some(_), None) => false,
    };
    covered && answered
}

/// Mutable state of one running task.
pub struct TaskRun<'a> {
    pub task: &'a TaskSpec,
    pub config: &'a SessionConfig,
    pub toolset: ToolsetState,
    pub messages: Vec<ChatMessage>,
    pub index: usize,
    /// Step index at which the current toolset was first offered.
    pub phase_start: usize,
}

pub enum StepError {
    Backend(crate::backend::BackendError),
    EmptyAnswer,
}

/// Runs tasks against one planner backend, one classifier and one gate.
#[derive(Clone)]
pub struct Agent {
    gate: Gate,
    planner: Arc<dyn CompletionBackend>,
    classifier: Classifier,
    handlers: Arc<dyn ToolHandler>,
}

impl Agent {
    pub fn new(gate: Gate, planner: Arc<dyn CompletionBackend>, classifier: Classifier) -> Self {
        Self {
            gate,
            planner,
            classifier,
            handlers: Arc::new(EchoHandler),
        }
    }

    pub fn with_handlers(mut self, handlers: Arc<dyn ToolHandler>) -> Self {
        self.handlers = handlers;
        self
    }

    pub fn gate(&self) -> &Gate {
        &self.gate
    }

    pub fn registry(&self) -> &ToolRegistry {
        self.gate.registry()
    }

    /// One planner request plus dispatch of whatever it asked for.
    pub fn execute_step(&self, run: &mut TaskRun<'_>) -> Result<StepRecord, StepError> {
        let offered = run.toolset.schema.clone();
        let request = CompletionRequest {
            model: run.config.model.clone(),
            messages: run.messages.clone(),
            tools: offered.clone(),
            temperature: run.config.temperature,
        };
        let tag = RequestTag::step(&run.task.id, run.index, run.index - run.phase_start);
        let response = self
            .planner
            .complete(&tag, &request)
            .map_err(StepError::Backend)?;
        let mut record = StepRecord {
            index: run.index,
            offered_schema_origin: offered.origin().clone(),
            offered_gated: offered.is_gated(),
            offered_tools: offered.len(),
            prompt_tokens: tokens::request_tokens(&request),
            completion_tokens: tokens::reply_tokens(&response.reply),
            endpoint_usage: response.usage,
            tool_calls: Vec::new(),
            terminal: false,
            answer: None,
        };
        match response.reply {
            Reply::Content(text) => {
                if text.trim().is_empty() {
                    return Err(StepError::EmptyAnswer);
                }
                run.messages.push(ChatMessage::assistant(text.clone()));
                record.terminal = true;
                record.answer = Some(text);
            }
            Reply::ToolCalls(calls) => {
                let was_expanded = run.toolset.expanded;
                record.tool_calls = dispatch_tool_calls(
                    &calls,
                    &offered,
                    &mut run.toolset,
                    self.registry(),
                    self.handlers.as_ref(),
                    run.config.parallel_tools,
                );
                run.messages.push(ChatMessage::assistant_tool_calls(calls));
                run.messages.extend(
                    record
                        .tool_calls
                        .iter()
                        .map(|r| ChatMessage::tool(&r.id, &r.result)),
                );
                if run.toolset.expanded && !was_expanded {
                    run.phase_start = run.index + 1;
                }
            }
        }
        Ok(record)
    }

    pub fn run_task(&self, task: &TaskSpec, config: &SessionConfig) -> Trajectory {
        let mut trajectory = Trajectory {
            task_id: task.id.clone(),
            scaffold: config.scaffold,
            gating: config.gating,
            decision: None,
            steps: Vec::new(),
            outcome: Outcome::Failure,
            answer: None,
            failure: None,
        };

        let toolset = if config.gating {
            let decided = self
                .gate
                .classify_intent(
                    &task.id,
                    &task.prompt,
                    &self.classifier,
                    &config.model,
                    config.temperature,
                )
                .and_then(|d| ToolsetState::gated(&self.gate, d));
            match decided {
                Ok(state) => state,
                Err(e) => {
                    trajectory.failure = Some(format!("gate: {e}"));
                    return trajectory;
                }
            }
        } else {
            ToolsetState::ungated(self.registry())
        };

        let mut run = TaskRun {
            task,
            config,
            toolset,
            messages: vec![
                ChatMessage::system(config.system_prompt()),
                ChatMessage::user(&task.prompt),
            ],
            index: 0,
            phase_start: 0,
        };

        trajectory.outcome = Outcome::BudgetExceeded;
        while run.index < config.max_steps {
            match self.execute_step(&mut run) {
                Ok(step) => {
                    let terminal = step.terminal;
                    if terminal {
                        trajectory.answer = step.answer.clone();
                    }
                    trajectory.steps.push(step);
                    if terminal {
                        trajectory.outcome = Outcome::Success;
                        break;
                    }
                }
                Err(StepError::Backend(e)) => {
                    trajectory.outcome = Outcome::Failure;
                    trajectory.failure = Some(format!("step {}: {e}", run.index));
                    break;
                }
                Err(StepError::EmptyAnswer) => {
                    trajectory.outcome = Outcome::Failure;
                    trajectory.failure = Some(format!("step {}: empty answer", run.index));
                    break;
                }
            }
            run.index += 1;
        }
        trajectory.decision = run.toolset.decision;
        trajectory
    }
}
