use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{json, Value};
use thiserror::Error;

use super::{
    BackendError, BackendKind, CompletionBackend, CompletionRequest, CompletionResponse, Purpose,
    Reply, RequestTag, ToolCall, Usage,
};
use crate::gate::SENTINEL_TOOL_NAME;
use crate::tokens;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScriptError {
    #[error("failed to parse script: {0}")]
    Parse(String),
    #[error("duplicate script entry for task `{task}` step {step}")]
    DuplicateKey { task: String, step: ScriptStep },
    #[error("failed to read script: {0}")]
    Io(String),
}

/// Which request an entry answers: a planner step, or the intent
/// classification call (`"classify"` in script files).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ScriptStep {
    Index(usize),
    Classify,
}

impl fmt::Display for ScriptStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScriptStep::Index(i) => write!(f, "{i}"),
            ScriptStep::Classify => f.write_str("classify"),
        }
    }
}

impl Serialize for ScriptStep {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            ScriptStep::Index(i) => s.serialize_u64(*i as u64),
            ScriptStep::Classify => s.serialize_str("classify"),
        }
    }
}

impl<'de> Deserialize<'de> for ScriptStep {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match Value::deserialize(d)? {
            Value::Number(n) => n
                .as_u64()
                .map(|i| ScriptStep::Index(i as usize))
                .ok_or_else(|| serde::de::Error::custom("step must be a non-negative integer")),
            Value::String(s) if s == "classify" => Ok(ScriptStep::Classify),
            other => Err(serde::de::Error::custom(format!(
                "step must be an integer or \"classify\", got {other}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedCall {
    pub name: String,
    #[serde(default = "empty_object")]
    pub arguments: Value,
}

fn empty_object() -> Value {
    json!({})
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptReply {
    ToolCalls(Vec<ScriptedCall>),
    Content(String),
}

/// Alternate reply used when the offered schema has at most `max_offered`
/// tools. Scripts use it to model a planner that batches calls once the
/// toolset is narrow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NarrowVariant {
    pub max_offered: usize,
    pub respond: ScriptReply,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub task: String,
    pub step: ScriptStep,
    pub respond: ScriptReply,
    /// If any of these tools is missing from the offered schema, the entry
    /// answers with a single call to the fallback sentinel instead.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub needs: Option<BTreeSet<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub narrow: Option<NarrowVariant>,
}

/// Deterministic backend answering from a script.
#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    entries: Vec<ScriptEntry>,
    index: HashMap<(String, ScriptStep), usize>,
}

impl ScriptedBackend {
    pub fn from_entries(entries: Vec<ScriptEntry>) -> Result<Self, ScriptError> {
        let mut index = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if index.insert((e.task.clone(), e.step), i).is_some() {
                return Err(ScriptError::DuplicateKey {
                    task: e.task.clone(),
                    step: e.step,
                });
            }
        }
        Ok(Self { entries, index })
    }

    pub fn from_json_str(text: &str) -> Result<Self, ScriptError> {
        let entries: Vec<ScriptEntry> =
            serde_json::from_str(text).map_err(|e| ScriptError::Parse(e.to_string()))?;
        Self::from_entries(entries)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScriptError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ScriptError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn entries(&self) -> &[ScriptEntry] {
        &self.entries
    }

    pub fn entry(&self, task: &str, step: ScriptStep) -> Option<&ScriptEntry> {
        self.index
            .get(&(task.to_string(), step))
            .map(|&i| &self.entries[i])
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.entries).expect("script serializes")
    }

    /// Resolves the reply an entry gives for a given set of offered tools.
    pub fn resolve<'a>(entry: &'a ScriptEntry, offered: &[&str]) -> ResolvedReply<'a> {
        if let Some(needs) = &entry.needs {
            if needs.iter().any(|n| !offered.contains(&n.as_str())) {
                return ResolvedReply::Sentinel;
            }
        }
        match &entry.narrow {
            Some(narrow) if offered.len() <= narrow.max_offered => {
                ResolvedReply::Scripted(&narrow.respond)
            }
            _ => ResolvedReply::Scripted(&entry.respond),
        }
    }
}

pub enum ResolvedReply<'a> {
    Scripted(&'a ScriptReply),
    Sentinel,
}

fn materialize(reply: &ScriptReply, id_prefix: &str) -> Reply {
    match reply {
        ScriptReply::Content(text) => Reply::Content(text.clone()),
        ScriptReply::ToolCalls(calls) => Reply::ToolCalls(
            calls
                .iter()
                .enumerate()
                .map(|(i, c)| ToolCall::new(format!("{id_prefix}_{i}"), &c.name, c.arguments.clone()))
                .collect(),
        ),
    }
}

impl CompletionBackend for ScriptedBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Scripted
    }

    fn complete(
        &self,
        tag: &RequestTag,
        request: &CompletionRequest,
    ) -> Result<CompletionResponse, BackendError> {
        request.validate()?;
        let (step, id_prefix) = match tag.purpose {
            Purpose::Classify { .. } => (ScriptStep::Classify, "call_classify".to_string()),
            Purpose::Step { index, script_step } => {
                (ScriptStep::Index(script_step), format!("call_{index}"))
            }
        };
        let entry = self.entry(&tag.task, step).ok_or_else(|| BackendError::ScriptMiss {
            task: tag.task.clone(),
            step: step.to_string(),
        })?;
        let offered: Vec<&str> = request.tools.tool_names().collect();
        let reply = match Self::resolve(entry, &offered) {
            ResolvedReply::Scripted(reply) => materialize(reply, &id_prefix),
            ResolvedReply::Sentinel => Reply::ToolCalls(vec![ToolCall::new(
                format!("{id_prefix}_0"),
                SENTINEL_TOOL_NAME,
                json!({}),
            )]),
        };
        let usage = Usage {
            prompt_tokens: tokens::request_tokens(request),
            completion_tokens: tokens::reply_tokens(&reply),
        };
        Ok(CompletionResponse {
            reply,
            usage: Some(usage),
        })
    }
}
