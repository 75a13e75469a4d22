//! Completion backends.
//!
//! Two implementations share [`CompletionBackend`]: [`HttpBackend`] speaks a
//! chat-completions style JSON protocol and [`ScriptedBackend`] replays a
//! script keyed by (task id, step index).

mod http;
mod scripted;
pub mod wire;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::canonical;
use crate::registry::ToolSchema;

pub use http::{HttpBackend, HttpConfig};
pub use scripted::{
    ScriptEntry, ScriptError, ScriptReply, ScriptStep, ScriptedBackend, ScriptedCall, NarrowVariant,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("malformed request: {0}")]
    MalformedRequest(String),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("no script entry for task `{task}` step {step}")]
    ScriptMiss { task: String, step: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
            Role::Tool => "tool",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub id: String,
    pub name: String,
    pub arguments: Value,
}

impl ToolCall {
    pub fn new(id: impl Into<String>, name: impl Into<String>, arguments: Value) -> Self {
        Self {
            id: id.into(),
            name: name.into(),
            arguments,
        }
    }
}

/// Canonical JSON of a tool-call list, used both for token costing and for
/// trajectory records.
pub fn tool_calls_text(calls: &[ToolCall]) -> String {
    canonical::to_canonical_string(calls)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call_id: Option<String>,
    /// Calls requested by an assistant message.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tool_calls: Vec<ToolCall>,
}

impl ChatMessage {
    fn plain(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
            tool_call_id: None,
            tool_calls: Vec::new(),
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self::plain(Role::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::plain(Role::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::plain(Role::Assistant, content)
    }

    pub fn assistant_tool_calls(calls: Vec<ToolCall>) -> Self {
        Self {
            tool_calls: calls,
            ..Self::plain(Role::Assistant, "")
        }
    }

    pub fn tool(call_id: impl Into<String>, content: impl Into<String>) -> Self {
        Self {
            tool_call_id: Some(call_id.into()),
            ..Self::plain(Role::Tool, content)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub tools: ToolSchema,
    pub temperature: f64,
}

impl CompletionRequest {
    /// Checks the request before any I/O happens.
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.messages.is_empty() {
            return Err(BackendError::MalformedRequest("no messages".into()));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(BackendError::MalformedRequest(format!(
                "invalid temperature {}",
                self.temperature
            )));
        }
        let mut issued: Vec<&str> = Vec::new();
        for (i, msg) in self.messages.iter().enumerate() {
            match (msg.role, &msg.tool_call_id) {
                (Role::Tool, Some(id)) => {
                    if !issued.contains(&id.as_str()) {
                        return Err(BackendError::MalformedRequest(format!(
                            "message {i} answers unknown tool call `{id}`"
                        )));
                    }
                }
                (Role::Tool, None) => {
                    return Err(BackendError::MalformedRequest(format!(
                        "tool message {i} has no tool_call_id"
                    )))
                }
                (_, Some(_)) => {
                    return Err(BackendError::MalformedRequest(format!(
                        "non-tool message {i} carries a tool_call_id"
                    )))
                }
                _ => {}
            }
            if !msg.tool_calls.is_empty() && msg.role != Role::Assistant {
                return Err(BackendError::MalformedRequest(format!(
                    "message {i}: only assistant messages may carry tool calls"
                )));
            }
            issued.extend(msg.tool_calls.iter().map(|c| c.id.as_str()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Reply {
    ToolCalls(Vec<ToolCall>),
    Content(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl Usage {
    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

impl std::ops::Add for Usage {
    type Output = Usage;
    fn add(self, rhs: Usage) -> Usage {
        Usage {
            prompt_tokens: self.prompt_tokens + rhs.prompt_tokens,
            completion_tokens: self.completion_tokens + rhs.completion_tokens,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionResponse {
    pub reply: Reply,
    /// Usage as reported by the endpoint, when it reports any.
    pub usage: Option<Usage>,
}

/// What a request is for; carried beside the request, never sent on the wire.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestTag {
    pub task: String,
    pub purpose: Purpose,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Classify {
        attempt: u32,
    },
    /// `index` is the trajectory step; `script_step` restarts at zero whenever
    /// the offered toolset changes.
    Step {
        index: usize,
        script_step: usize,
    },
}

impl RequestTag {
    pub fn classify(task: impl Into<String>, attempt: u32) -> Self {
        Self {
            task: task.into(),
            purpose: Purpose::Classify { attempt },
        }
    }

    pub fn step(task: impl Into<String>, index: usize, script_step: usize) -> Self {
        Self {
            task: task.into(),
            purpose: Purpose::Step { index, script_step },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Llm,
    Scripted,
    Rule,
}

pub trait CompletionBackend: Send + Sync {
    fn kind(&self) -> BackendKind;

    fn complete(
        &self,
        tag: &RequestTag,
        request: &CompletionRequest,
    ) -> Result<CompletionResponse, BackendError>;
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn req(messages: Vec<ChatMessage>) -> CompletionRequest {
        CompletionRequest {
            model: "m".into(),
            messages,
            tools: ToolSchema::empty(),
            temperature: 0.0,
        }
    }

    #[test]
    fn empty_messages_rejected() {
        assert!(matches!(
            req(vec![]).validate(),
            Err(BackendError::MalformedRequest(_))
        ));
    }

    #[test]
    fn tool_message_must_reference_prior_call() {
        let ok = req(vec![
            ChatMessage::user("hi"),
            ChatMessage::assistant_tool_calls(vec![ToolCall::new("c1", "t", json!({}))]),
            ChatMessage::tool("c1", "t-ok"),
        ]);
        ok.validate().unwrap();
        let bad = req(vec![ChatMessage::user("hi"), ChatMessage::tool("c9", "x")]);
        assert!(bad.validate().is_err());
    }
}
