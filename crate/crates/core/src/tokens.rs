//! Token accounting.
//!
//! The desk tokenizer counts `ceil(utf8_bytes / 4)` tokens per string. It is
//! not a model tokenizer; it exists so that every run is reproducible
//! bit-for-bit on any machine. Each chat message adds a fixed framing
//! overhead of [`MESSAGE_OVERHEAD`] tokens.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::Trajectory;
use crate::backend::{tool_calls_text, ChatMessage, CompletionRequest, Reply, Usage};

pub const MESSAGE_OVERHEAD: u64 = 4;

#[derive(Debug, Error, PartialEq)]
pub enum LedgerError {
    #[error("baseline must be positive, got {0}")]
    NonPositiveBaseline(f64),
    #[error("task `{task}`: endpoint usage missing for {what}")]
    MissingEndpointUsage { task: String, what: String },
}

/// Counts tokens in text. Message and request costs are derived from `count`.
pub trait TokenCounter {
    fn count(&self, text: &str) -> u64;

    fn message_tokens(&self, message: &ChatMessage) -> u64 {
        let calls = if message.tool_calls.is_empty() {
            0
        } else {
            self.count(&tool_calls_text(&message.tool_calls))
        };
        MESSAGE_OVERHEAD + self.count(message.role.as_str()) + self.count(&message.content) + calls
    }

    fn request_tokens(&self, request: &CompletionRequest) -> u64 {
        request
            .messages
            .iter()
            .map(|m| self.message_tokens(m))
            .sum::<u64>()
            + self.count(request.tools.canonical())
    }

    fn reply_tokens(&self, reply: &Reply) -> u64 {
        match reply {
            Reply::Content(text) => self.count(text),
            Reply::ToolCalls(calls) => self.count(&tool_calls_text(calls)),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct DeskTokenizer;

impl TokenCounter for DeskTokenizer {
    fn count(&self, text: &str) -> u64 {
        desk_count(text)
    }
}

pub fn desk_count(text: &str) -> u64 {
    (text.len() as u64).div_ceil(4)
}

pub fn message_tokens(message: &ChatMessage) -> u64 {
    DeskTokenizer.message_tokens(message)
}

pub fn request_tokens(request: &CompletionRequest) -> u64 {
    DeskTokenizer.request_tokens(request)
}

pub fn reply_tokens(reply: &Reply) -> u64 {
    DeskTokenizer.reply_tokens(reply)
}

pub(crate) fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

/// Percentage saved by `gated` relative to `baseline`, rounded to one decimal.
pub fn reduction_percent(baseline: f64, gated: f64) -> Result<f64, LedgerError> {
    if baseline.is_nan() || baseline <= 0.0 {
        return Err(LedgerError::NonPositiveBaseline(baseline));
    }
    Ok(round1(100.0 * (baseline - gated) / baseline))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TokenSource {
    #[default]
    Desk,
    Endpoint,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenPair {
    pub prompt: u64,
    pub completion: u64,
}

impl TokenPair {
    pub fn total(&self) -> u64 {
        self.prompt + self.completion
    }
}

impl From<Usage> for TokenPair {
    fn from(u: Usage) -> Self {
        Self {
            prompt: u.prompt_tokens,
            completion: u.completion_tokens,
        }
    }
}

/// Per-task token accounting drawn from a single source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenLedger {
    pub task_id: String,
    pub source: TokenSource,
    pub classification: TokenPair,
    pub steps: Vec<TokenPair>,
    pub total: u64,
}

impl TokenLedger {
    pub fn new(
        task_id: impl Into<String>,
        source: TokenSource,
        classification: TokenPair,
        steps: Vec<TokenPair>,
    ) -> Self {
        let total = classification.total() + steps.iter().map(TokenPair::total).sum::<u64>();
        Self {
            task_id: task_id.into(),
            source,
            classification,
            steps,
            total,
        }
    }

    pub fn from_trajectory(
        trajectory: &Trajectory,
        source: TokenSource,
    ) -> Result<Self, LedgerError> {
        let missing = |what: String| LedgerError::MissingEndpointUsage {
            task: trajectory.task_id.clone(),
            what,
        };
        let classification = match (&trajectory.decision, source) {
            (None, _) => TokenPair::default(),
            (Some(d), TokenSource::Desk) => TokenPair {
                prompt: d.classification_prompt_tokens,
                completion: d.classification_completion_tokens,
            },
            (Some(d), TokenSource::Endpoint) => match d.backend_kind {
                // no model call was made
                crate::backend::BackendKind::Rule => TokenPair::default(),
                _ => d
                    .endpoint_usage
                    .map(TokenPair::from)
                    .ok_or_else(|| missing("classification".into()))?,
            },
        };
        let steps = trajectory
            .steps
            .iter()
            .map(|s| match source {
                TokenSource::Desk => Ok(TokenPair {
                    prompt: s.prompt_tokens,
                    completion: s.completion_tokens,
                }),
                TokenSource::Endpoint => s
                    .endpoint_usage
                    .map(TokenPair::from)
                    .ok_or_else(|| missing(format!("step {}", s.index))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::new(&trajectory.task_id, source, classification, steps))
    }

    pub fn steps_total(&self) -> u64 {
        self.steps.iter().map(TokenPair::total).sum()
    }

    /// Totals must equal the sum of their parts.
    pub fn is_consistent(&self) -> bool {
        self.total == self.classification.total() + self.steps_total()
    }
}
