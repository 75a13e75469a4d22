//! Intent-gated tool selection for LLM agents.
//!
//! A [`gate::Gate`] classifies a query into an intent, offers the agent only
//! the tool libraries mapped to that intent, and lets the agent fall back to
//! the full toolset once through a reserved sentinel tool. Token usage is
//! counted deterministically so gated and ungated runs can be compared.

pub mod agent;
pub mod backend;
pub mod bench;
pub mod canonical;
pub mod gate;
pub mod intent;
pub mod registry;
pub mod synthetic;
pub mod tokens;

pub use agent::{Agent, Outcome, Scaffold, SessionConfig, TaskSpec, Trajectory};
pub use backend::{CompletionBackend, HttpBackend, HttpConfig, ScriptedBackend};
pub use gate::{Classifier, Gate, GateDecision, GateError, SENTINEL_TOOL_NAME};
pub use intent::{IntentMap, IntentRecord};
pub use registry::{ToolRegistry, ToolSchema, ToolSpec};
pub use tokens::{DeskTokenizer, TokenLedger, TokenSource};
