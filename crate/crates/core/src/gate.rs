//! Runtime intent gating.
//!
//! Each task gets one classification call that sees only intent ids and
//! descriptions. The classified intent selects a set of libraries; the planner
//! is then offered only those tools plus the [`SENTINEL_TOOL_NAME`] tool, which
//! switches the task to the full toolset when called. A task may expand at
//! most once.

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{
    BackendError, BackendKind, ChatMessage, CompletionBackend, CompletionRequest, Reply,
    RequestTag, Usage,
};
use crate::intent::{IntentError, IntentMap, LibrarySelection, MapIssue};
use crate::registry::{RegistryError, ToolRegistry, ToolSchema, ToolSpec};
use crate::tokens;

pub const SENTINEL_TOOL_NAME: &str = "request_full_toolset";

/// Intent id recorded when the decision falls back to every library.
pub const ALL_INTENT: &str = "ALL";

/// Reply a classifier gives when no intent fits.
pub const UNKNOWN_INTENT: &str = "UNKNOWN";

pub const DEFAULT_CLASSIFIER_TEMPLATE: &str = "\
Classify the user request below into exactly one intent.

Intents:
{intents}

Request: {query}

Reply with the id of the single best intent, exactly as written above, and nothing else. \
If no intent applies, reply UNKNOWN.";

const CLASSIFIER_RETRY_REMINDER: &str =
    "Your reply was not one of the listed intent ids. Reply with exactly one listed id, or UNKNOWN.";

pub fn sentinel_tool() -> ToolSpec {
    ToolSpec::without_parameters(
        SENTINEL_TOOL_NAME,
        "Call this tool when none of the offered tools can accomplish the task. \
         It takes no arguments; from the next step on, the complete toolset is offered.",
    )
}

#[derive(Debug, Error, PartialEq)]
pub enum GateError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Intent(#[from] IntentError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("intent map does not match the registry: {0:?}")]
    InvalidMap(Vec<MapIssue>),
    #[error("classifier template must contain {{intents}} and {{query}}")]
    InvalidTemplate,
    #[error("the full toolset was already requested for this task")]
    AlreadyExpanded,
    #[error("the toolset is not gated; there is nothing to expand")]
    NotGated,
}

/// Outcome of classifying one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateDecision {
    /// Classified intent, or [`ALL_INTENT`] when classification fell back.
    pub intent_id: String,
    pub selected_libraries: BTreeSet<String>,
    /// The decision offers the full toolset, without the sentinel.
    pub full_toolset: bool,
    pub classification_prompt_tokens: u64,
    pub classification_completion_tokens: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint_usage: Option<Usage>,
    pub backend_kind: BackendKind,
    /// The classifier never produced a listed id or UNKNOWN.
    pub malformed_classification: bool,
    pub fallback_used: bool,
}

impl GateDecision {
    pub fn classification_tokens(&self) -> u64 {
        self.classification_prompt_tokens + self.classification_completion_tokens
    }
}

#[derive(Clone)]
pub enum Classifier {
    Backend(Arc<dyn CompletionBackend>),
    Rule,
}

impl Classifier {
    pub fn kind(&self) -> BackendKind {
        match self {
            Classifier::Backend(b) => b.kind(),
            Classifier::Rule => BackendKind::Rule,
        }
    }
}

/// Keyword classifier: the intent whose example queries share the most
/// distinct words with the prompt wins; ties go to the earlier intent; no
/// overlap gives [`UNKNOWN_INTENT`].
pub fn rule_classifier(prompt: &str, map: &IntentMap) -> String {
    let words = word_set(prompt);
    let mut best: Option<(&str, usize)> = None;
    for intent in &map.intents {
        let vocabulary: BTreeSet<String> = intent
            .example_queries
            .iter()
            .flat_map(|q| word_set(q))
            .collect();
        let overlap = words.intersection(&vocabulary).count();
        if overlap > 0 && best.is_none_or(|(_, b)| overlap > b) {
            best = Some((&intent.id, overlap));
        }
    }
    best.map_or_else(|| UNKNOWN_INTENT.to_string(), |(id, _)| id.to_string())
}

fn word_set(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

enum Parsed<'a> {
    Intent(&'a str),
    Unknown,
    Malformed,
}

fn parse_classification<'a>(reply: &str, map: &'a IntentMap) -> Parsed<'a> {
    let cleaned = reply
        .trim()
        .trim_matches(|c: char| matches!(c, '"' | '\'' | '`' | '.') || c.is_whitespace());
    if cleaned == UNKNOWN_INTENT {
        return Parsed::Unknown;
    }
    if let Some(intent) = map.intents.iter().find(|i| i.id == cleaned) {
        return Parsed::Intent(&intent.id);
    }
    let folded: Vec<_> = map
        .intents
        .iter()
        .filter(|i| i.id.to_lowercase() == cleaned.to_lowercase())
        .collect();
    match folded.as_slice() {
        [only] => Parsed::Intent(&only.id),
        _ if cleaned.eq_ignore_ascii_case(UNKNOWN_INTENT) => Parsed::Unknown,
        _ => Parsed::Malformed,
    }
}

/// Shared, immutable gating context: a sealed registry, a validated map and
/// the classifier prompt template.
#[derive(Debug, Clone)]
pub struct Gate {
    registry: Arc<ToolRegistry>,
    map: Arc<IntentMap>,
    template: String,
}

impl Gate {
    pub fn new(registry: Arc<ToolRegistry>, map: Arc<IntentMap>) -> Result<Self, GateError> {
        let issues = map.validate(&registry);
        if !issues.is_empty() {
            return Err(GateError::InvalidMap(issues));
        }
        Ok(Self {
            registry,
            map,
            template: DEFAULT_CLASSIFIER_TEMPLATE.to_string(),
        })
    }

    pub fn with_template(mut self, template: impl Into<String>) -> Result<Self, GateError> {
        let template = template.into();
        if !template.contains("{intents}") || !template.contains("{query}") {
            return Err(GateError::InvalidTemplate);
        }
        self.template = template;
        Ok(self)
    }

    pub fn registry(&self) -> &Arc<ToolRegistry> {
        &self.registry
    }

    pub fn map(&self) -> &Arc<IntentMap> {
        &self.map
    }

    /// The classification prompt for `query`: intent ids and descriptions
    /// only, never tool schemas.
    pub fn render_prompt(&self, query: &str) -> String {
        let intents = self
            .map
            .intents
            .iter()
            .map(|i| {
                if i.description.is_empty() || i.description == i.id {
                    format!("- {}", i.id)
                } else {
                    format!("- {}: {}", i.id, i.description)
                }
            })
            .collect::<Vec<_>>()
            .join("\n");
        self.template
            .replace("{intents}", &intents)
            .replace("{query}", query)
    }

    fn decision_for(
        &self,
        intent_id: Option<&str>,
        backend_kind: BackendKind,
    ) -> Result<GateDecision, GateError> {
        let (intent_id, selection) = match intent_id {
            Some(id) => (id, self.map.libraries_for(id)?),
            None => (ALL_INTENT, self.map.unknown_intent(UNKNOWN_INTENT)?),
        };
        let mut decision = self.all_decision(backend_kind);
        decision.intent_id = intent_id.to_string();
        if let LibrarySelection::Subset(libs) = selection {
            decision.selected_libraries = libs;
            decision.full_toolset = false;
        }
        Ok(decision)
    }

    pub fn classify_intent(
        &self,
        task_id: &str,
        prompt: &str,
        classifier: &Classifier,
        model: &str,
        temperature: f64,
    ) -> Result<GateDecision, GateError> {
        let backend = match classifier {
            Classifier::Rule => {
                let label = rule_classifier(prompt, &self.map);
                let id = (label != UNKNOWN_INTENT).then_some(label.as_str());
                return self.decision_for(id, BackendKind::Rule);
            }
            Classifier::Backend(backend) => backend,
        };

        let mut request = CompletionRequest {
            model: model.to_string(),
            messages: vec![ChatMessage::user(self.render_prompt(prompt))],
            tools: ToolSchema::empty(),
            temperature,
        };
        let mut desk = Usage::default();
        let mut endpoint = Some(Usage::default());
        for attempt in 0..2u32 {
            if attempt > 0 {
                request
                    .messages
                    .push(ChatMessage::user(CLASSIFIER_RETRY_REMINDER));
            }
            let response = backend.complete(&RequestTag::classify(task_id, attempt), &request)?;
            desk = desk
                + Usage {
                    prompt_tokens: tokens::request_tokens(&request),
                    completion_tokens: tokens::reply_tokens(&response.reply),
                };
            endpoint = endpoint.zip(response.usage).map(|(a, b)| a + b);
            let parsed = match &response.reply {
                Reply::Content(text) => parse_classification(text, &self.map),
                Reply::ToolCalls(_) => Parsed::Malformed,
            };
            let outcome = match parsed {
                Parsed::Intent(id) => Some(self.decision_for(Some(id), backend.kind())),
                Parsed::Unknown => Some(self.decision_for(None, backend.kind())),
                Parsed::Malformed => {
                    request.messages.push(match response.reply {
                        Reply::Content(text) => ChatMessage::assistant(text),
                        Reply::ToolCalls(calls) => ChatMessage::assistant(
                            crate::backend::tool_calls_text(&calls),
                        ),
                    });
                    None
                }
            };
            if let Some(decision) = outcome {
                let mut decision = decision?;
                decision.classification_prompt_tokens = desk.prompt_tokens;
                decision.classification_completion_tokens = desk.completion_tokens;
                decision.endpoint_usage = endpoint;
                return Ok(decision);
            }
        }
        // fail open: no usable label after the retry
        let mut decision = self.all_decision(backend.kind());
        decision.malformed_classification = true;
        decision.classification_prompt_tokens = desk.prompt_tokens;
        decision.classification_completion_tokens = desk.completion_tokens;
        decision.endpoint_usage = endpoint;
        Ok(decision)
    }

    fn all_decision(&self, backend_kind: BackendKind) -> GateDecision {
        GateDecision {
            intent_id: ALL_INTENT.to_string(),
            selected_libraries: self.registry.library_names().map(str::to_string).collect(),
            full_toolset: true,
            classification_prompt_tokens: 0,
            classification_completion_tokens: 0,
            endpoint_usage: None,
            backend_kind,
            malformed_classification: false,
            fallback_used: false,
        }
    }

    /// Schema offered after gating: the selected libraries plus the sentinel,
    /// or the plain full schema for full-toolset decisions.
    pub fn gate_toolset(&self, decision: &GateDecision) -> Result<ToolSchema, GateError> {
        if decision.full_toolset {
            return Ok(self.registry.full_schema());
        }
        let schema = self.registry.subset_schema(&decision.selected_libraries)?;
        Ok(schema.with_appended(sentinel_tool()))
    }
}

/// Per-task toolset state.
#[derive(Debug, Clone)]
pub struct ToolsetState {
    pub schema: ToolSchema,
    pub decision: Option<GateDecision>,
    pub expanded: bool,
}

impl ToolsetState {
    pub fn ungated(registry: &ToolRegistry) -> Self {
        Self {
            schema: registry.full_schema(),
            decision: None,
            expanded: false,
        }
    }

    pub fn gated(gate: &Gate, decision: GateDecision) -> Result<Self, GateError> {
        Ok(Self {
            schema: gate.gate_toolset(&decision)?,
            decision: Some(decision),
            expanded: false,
        })
    }
}

/// Switches a gated task to the full toolset. Allowed once per task.
pub fn expand_toolset(
    state: &mut ToolsetState,
    registry: &ToolRegistry,
) -> Result<ToolSchema, GateError> {
    if state.expanded {
        return Err(GateError::AlreadyExpanded);
    }
    if !state.schema.is_gated() {
        return Err(GateError::NotGated);
    }
    state.schema = registry.full_schema();
    state.expanded = true;
    if let Some(decision) = state.decision.as_mut() {
        decision.fallback_used = true;
    }
    Ok(state.schema.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{CompletionResponse, ToolCall};
    use crate::intent::DefaultPolicy;
    use crate::registry::RegistryBuilder;
    use std::sync::Mutex;

    const THREE_INTENTS: &str = r#"{
      "intents": [
        {"id": "Load→Filter→Plot", "description": "Load→Filter→Plot",
         "example_queries": ["Plot xview1 images around Tampa Bay, FL, USA"],
         "libraries": ["SQL_apis", "data_apis", "map_apis"]},
        {"id": "UI/Web Navigation", "description": "UI/Web Navigation",
         "example_queries": ["Search Bing for \"System-efficient LLM prompting\"?"],
         "libraries": ["web_apis", "UI_apis"]},
        {"id": "Information Seeking", "description": "Information Seeking",
         "example_queries": ["Which model to use for airplane detection?"],
         "libraries": ["wiki_apis"]}
      ]
    }"#;

    fn registry() -> Arc<ToolRegistry> {
        let mut b = RegistryBuilder::new();
        for lib in ["SQL_apis", "data_apis", "map_apis", "web_apis", "UI_apis", "wiki_apis"] {
            let tools = (0..2)
                .map(|i| {
                    ToolSpec::without_parameters(
                        format!("{}_{i}", lib.to_lowercase()),
                        format!("Tool {i} of {lib}"),
                    )
                })
                .collect();
            b.register_library(lib, "", tools).unwrap();
        }
        Arc::new(b.seal())
    }

    fn gate() -> Gate {
        Gate::new(registry(), Arc::new(IntentMap::from_json_str(THREE_INTENTS).unwrap())).unwrap()
    }

    /// Answers classification calls from a fixed list of replies.
    struct Replies(Mutex<Vec<&'static str>>);

    impl CompletionBackend for Replies {
        fn kind(&self) -> BackendKind {
            BackendKind::Scripted
        }
        fn complete(
            &self,
            _tag: &RequestTag,
            request: &CompletionRequest,
        ) -> Result<CompletionResponse, BackendError> {
            request.validate()?;
            assert!(request.tools.is_empty(), "classifier must not see tools");
            let mut replies = self.0.lock().unwrap();
            let text = if replies.len() > 1 { replies.remove(0) } else { replies[0] };
            Ok(CompletionResponse {
                reply: Reply::Content(text.to_string()),
                usage: None,
            })
        }
    }

    fn replies(r: &[&'static str]) -> Classifier {
        Classifier::Backend(Arc::new(Replies(Mutex::new(r.to_vec()))))
    }

    #[test]
    fn classifies_load_filter_plot() {
        let d = gate()
            .classify_intent(
                "t1",
                "Plot xview1 images around Tampa Bay, FL, USA",
                &replies(&["Load→Filter→Plot"]),
                "m",
                0.0,
            )
            .unwrap();
        assert_eq!(d.intent_id, "Load→Filter→Plot");
        assert_eq!(
            d.selected_libraries,
            BTreeSet::from(["SQL_apis".into(), "data_apis".into(), "map_apis".into()])
        );
        assert!(!d.full_toolset && !d.malformed_classification && !d.fallback_used);
        assert!(d.classification_prompt_tokens > 0);
        assert_eq!(d.classification_completion_tokens, tokens::desk_count("Load→Filter→Plot"));
        assert_eq!(d.endpoint_usage, None);
    }

    #[test]
    fn unknown_reply_falls_back_to_all() {
        let d = gate()
            .classify_intent("t", "q", &replies(&["UNKNOWN"]), "m", 0.0)
            .unwrap();
        assert_eq!(d.intent_id, ALL_INTENT);
        assert!(d.full_toolset);
        assert_eq!(d.selected_libraries.len(), 6);
        assert!(!d.malformed_classification);
    }

    #[test]
    fn unknown_reply_with_reject_policy_errors() {
        let mut map = IntentMap::from_json_str(THREE_INTENTS).unwrap();
        map.default_policy = DefaultPolicy::Reject;
        let gate = Gate::new(registry(), Arc::new(map)).unwrap();
        assert!(matches!(
            gate.classify_intent("t", "q", &replies(&["UNKNOWN"]), "m", 0.0),
            Err(GateError::Intent(IntentError::UnknownIntent(_)))
        ));
    }

    #[test]
    fn free_text_twice_is_malformed() {
        let g = gate();
        let d = g
            .classify_intent("t", "q", &replies(&["probably mapping stuff"]), "m", 0.0)
            .unwrap();
        assert_eq!(d.intent_id, ALL_INTENT);
        assert!(d.full_toolset);
        assert!(d.malformed_classification);
        // both attempts are charged
        let first = CompletionRequest {
            model: "m".into(),
            messages: vec![ChatMessage::user(g.render_prompt("q"))],
            tools: ToolSchema::empty(),
            temperature: 0.0,
        };
        assert!(d.classification_prompt_tokens > 2 * tokens::request_tokens(&first));
        assert_eq!(
            d.classification_completion_tokens,
            2 * tokens::desk_count("probably mapping stuff")
        );
    }

    #[test]
    fn retry_recovers() {
        let d = gate()
            .classify_intent("t", "q", &replies(&["hmm", "`Information Seeking`."]), "m", 0.0)
            .unwrap();
        assert_eq!(d.intent_id, "Information Seeking");
        assert!(!d.malformed_classification);
    }

    #[test]
    fn gated_schema_appends_sentinel() {
        let g = gate();
        let d = g
            .classify_intent("t", "q", &replies(&["Information Seeking"]), "m", 0.0)
            .unwrap();
        let schema = g.gate_toolset(&d).unwrap();
        let names: Vec<_> = schema.tool_names().collect();
        assert_eq!(names, ["wiki_apis_0", "wiki_apis_1", SENTINEL_TOOL_NAME]);
        assert!(schema.is_gated());
    }

    #[test]
    fn all_decision_has_no_sentinel() {
        let g = gate();
        let d = g.classify_intent("t", "q", &replies(&["UNKNOWN"]), "m", 0.0).unwrap();
        let schema = g.gate_toolset(&d).unwrap();
        assert_eq!(schema, g.registry().full_schema());
        assert!(!schema.is_gated());
    }

    #[test]
    fn explicit_all_libraries_keeps_sentinel() {
        let g = gate();
        let mut d = g.classify_intent("t", "q", &replies(&["UNKNOWN"]), "m", 0.0).unwrap();
        d.full_toolset = false;
        let schema = g.gate_toolset(&d).unwrap();
        assert_eq!(schema.len(), 13);
        assert_eq!(schema.tools().last().unwrap().name, SENTINEL_TOOL_NAME);
    }

    #[test]
    fn expansion_once_only() {
        let g = gate();
        let d = g
            .classify_intent("t", "q", &replies(&["Information Seeking"]), "m", 0.0)
            .unwrap();
        let mut state = ToolsetState::gated(&g, d).unwrap();
        let full = expand_toolset(&mut state, g.registry()).unwrap();
        assert_eq!(full, g.registry().full_schema());
        assert!(state.decision.as_ref().unwrap().fallback_used);
        assert_eq!(
            expand_toolset(&mut state, g.registry()).unwrap_err(),
            GateError::AlreadyExpanded
        );
    }

    #[test]
    fn expansion_rejected_when_ungated() {
        let g = gate();
        let mut state = ToolsetState::ungated(g.registry());
        assert_eq!(
            expand_toolset(&mut state, g.registry()).unwrap_err(),
            GateError::NotGated
        );
    }

    #[test]
    fn rule_classifier_cases() {
        let map = IntentMap::from_json_str(THREE_INTENTS).unwrap();
        assert_eq!(rule_classifier("Search Bing for cheap flights", &map), "UI/Web Navigation");
        assert_eq!(rule_classifier("", &map), UNKNOWN_INTENT);
        assert_eq!(rule_classifier("zzz qqq", &map), UNKNOWN_INTENT);
        // "for" appears in rows 2 and 3; row 2 comes first
        assert_eq!(rule_classifier("FOR", &map), "UI/Web Navigation");
        assert_eq!(
            rule_classifier("Plot images around Tampa", &map),
            "Load→Filter→Plot"
        );
    }

    #[test]
    fn rule_backend_charges_nothing() {
        let d = gate()
            .classify_intent("t", "Which model detects ships?", &Classifier::Rule, "m", 0.0)
            .unwrap();
        assert_eq!(d.intent_id, "Information Seeking");
        assert_eq!(d.backend_kind, BackendKind::Rule);
        assert_eq!(d.classification_tokens(), 0);
    }

    #[test]
    fn tool_call_reply_is_malformed() {
        struct Calls;
        impl CompletionBackend for Calls {
            fn kind(&self) -> BackendKind {
                BackendKind::Llm
            }
            fn complete(
                &self,
                _: &RequestTag,
                _: &CompletionRequest,
            ) -> Result<CompletionResponse, BackendError> {
                Ok(CompletionResponse {
                    reply: Reply::ToolCalls(vec![ToolCall::new("c", "x", serde_json::json!({}))]),
                    usage: Some(Usage { prompt_tokens: 7, completion_tokens: 1 }),
                })
            }
        }
        let d = gate()
            .classify_intent("t", "q", &Classifier::Backend(Arc::new(Calls)), "m", 0.0)
            .unwrap();
        assert!(d.malformed_classification);
        assert_eq!(d.endpoint_usage, Some(Usage { prompt_tokens: 14, completion_tokens: 2 }));
    }

    #[test]
    fn invalid_map_and_template_rejected() {
        let mut map = IntentMap::from_json_str(THREE_INTENTS).unwrap();
        map.intents[2].libraries.insert("geo_apis".into());
        assert!(matches!(
            Gate::new(registry(), Arc::new(map)),
            Err(GateError::InvalidMap(issues)) if issues.len() == 1
        ));
        assert_eq!(
            gate().with_template("no placeholders").unwrap_err(),
            GateError::InvalidTemplate
        );
    }

    #[test]
    fn classifier_prompt_lists_ids_not_tools() {
        let text = gate().render_prompt("Plot it");
        assert!(text.contains("- Load→Filter→Plot"));
        assert!(text.contains("- Information Seeking"));
        assert!(text.contains("Request: Plot it"));
        assert!(!text.contains("wiki_apis_0"));
    }
}
