//! Chat-completions wire format.
//!
//! Requests carry `model`, `messages`, `tools`, `temperature` and
//! `tool_choice: "auto"`. Responses are read from `choices[0].message` and
//! `usage`. Tool-call arguments travel as JSON-encoded strings; arguments that
//! fail to parse are kept verbatim as a JSON string value so the agent loop can
//! report them as malformed.

use serde_json::{json, Map, Value};

use super::{BackendError, ChatMessage, CompletionRequest, CompletionResponse, Reply, Role, ToolCall, Usage};
use crate::registry::{ToolSchema, ToolSpec};

fn encode_arguments(arguments: &Value) -> String {
    match arguments {
        Value::String(raw) => raw.clone(),
        other => other.to_string(),
    }
}

fn decode_arguments(raw: &str) -> Value {
    match serde_json::from_str::<Value>(raw) {
        Ok(Value::String(_)) | Err(_) => Value::String(raw.to_string()),
        Ok(v) => v,
    }
}

fn encode_tool_call(call: &ToolCall) -> Value {
    json!({
        "id": call.id,
        "type": "function",
        "function": {"name": call.name, "arguments": encode_arguments(&call.arguments)},
    })
}

fn decode_tool_call(v: &Value) -> Result<ToolCall, BackendError> {
    let bad = |what: &str| BackendError::MalformedResponse(format!("tool call: {what}"));
    let id = v.get("id").and_then(Value::as_str).ok_or_else(|| bad("missing id"))?;
    let function = v.get("function").ok_or_else(|| bad("missing function"))?;
    let name = function
        .get("name")
        .and_then(Value::as_str)
        .ok_or_else(|| bad("missing function.name"))?;
    let arguments = match function.get("arguments") {
        None | Some(Value::Null) => json!({}),
        Some(Value::String(raw)) => decode_arguments(raw),
        // some servers send the object directly
        Some(other) => other.clone(),
    };
    Ok(ToolCall::new(id, name, arguments))
}

fn encode_message(msg: &ChatMessage) -> Value {
    let mut obj = Map::new();
    obj.insert("role".into(), json!(msg.role.as_str()));
    if !msg.tool_calls.is_empty() && msg.content.is_empty() {
        obj.insert("content".into(), Value::Null);
    } else {
        obj.insert("content".into(), json!(msg.content));
    }
    if let Some(id) = &msg.tool_call_id {
        obj.insert("tool_call_id".into(), json!(id));
    }
    if !msg.tool_calls.is_empty() {
        obj.insert(
            "tool_calls".into(),
            Value::Array(msg.tool_calls.iter().map(encode_tool_call).collect()),
        );
    }
    Value::Object(obj)
}

fn decode_message(v: &Value) -> Result<ChatMessage, BackendError> {
    let bad = |what: String| BackendError::MalformedRequest(what);
    let role: Role = serde_json::from_value(v.get("role").cloned().unwrap_or(Value::Null))
        .map_err(|e| bad(format!("role: {e}")))?;
    let content = match v.get("content") {
        None | Some(Value::Null) => String::new(),
        Some(Value::String(s)) => s.clone(),
        Some(other) => return Err(bad(format!("unsupported content {other}"))),
    };
    let tool_call_id = v
        .get("tool_call_id")
        .and_then(Value::as_str)
        .map(str::to_string);
    let tool_calls = match v.get("tool_calls") {
        None | Some(Value::Null) => Vec::new(),
        Some(Value::Array(items)) => items
            .iter()
            .map(|c| decode_tool_call(c).map_err(|e| bad(e.to_string())))
            .collect::<Result<_, _>>()?,
        Some(_) => return Err(bad("tool_calls must be an array".into())),
    };
    Ok(ChatMessage {
        role,
        content,
        tool_call_id,
        tool_calls,
    })
}

pub fn request_to_value(req: &CompletionRequest) -> Value {
    let mut obj = Map::new();
    obj.insert("model".into(), json!(req.model));
    obj.insert(
        "messages".into(),
        Value::Array(req.messages.iter().map(encode_message).collect()),
    );
    obj.insert("temperature".into(), json!(req.temperature));
    if !req.tools.is_empty() {
        let tools = req
            .tools
            .tools()
            .iter()
            .map(|t| {
                json!({
                    "type": "function",
                    "function": {"name": t.name, "description": t.description, "parameters": t.parameters},
                })
            })
            .collect();
        obj.insert("tools".into(), Value::Array(tools));
        obj.insert("tool_choice".into(), json!("auto"));
    }
    Value::Object(obj)
}

pub fn encode_request(req: &CompletionRequest) -> String {
    request_to_value(req).to_string()
}

pub fn parse_request(text: &str) -> Result<CompletionRequest, BackendError> {
    let v: Value =
        serde_json::from_str(text).map_err(|e| BackendError::MalformedRequest(e.to_string()))?;
    request_from_value(&v)
}

pub fn request_from_value(v: &Value) -> Result<CompletionRequest, BackendError> {
    let bad = |what: &str| BackendError::MalformedRequest(what.to_string());
    let model = v
        .get("model")
        .and_then(Value::as_str)
        .ok_or_else(|| bad("missing model"))?;
    let messages = v
        .get("messages")
        .and_then(Value::as_array)
        .ok_or_else(|| bad("missing messages"))?
        .iter()
        .map(decode_message)
        .collect::<Result<Vec<_>, _>>()?;
    let temperature = v.get("temperature").and_then(Value::as_f64).unwrap_or(1.0);
    let tools = match v.get("tools") {
        None | Some(Value::Null) => Vec::new(),
        Some(Value::Array(items)) => items
            .iter()
            .map(|t| {
                let f = t.get("function").ok_or_else(|| bad("tool without function"))?;
                Ok(ToolSpec {
                    name: f
                        .get("name")
                        .and_then(Value::as_str)
                        .ok_or_else(|| bad("tool without name"))?
                        .to_string(),
                    description: f
                        .get("description")
                        .and_then(Value::as_str)
                        .unwrap_or_default()
                        .to_string(),
                    parameters: f.get("parameters").cloned().unwrap_or_else(|| json!({})),
                })
            })
            .collect::<Result<Vec<_>, BackendError>>()?,
        Some(_) => return Err(bad("tools must be an array")),
    };
    Ok(CompletionRequest {
        model: model.to_string(),
        messages,
        tools: ToolSchema::from_tools(tools),
        temperature,
    })
}

pub fn response_to_value(resp: &CompletionResponse) -> Value {
    let (message, finish) = match &resp.reply {
        Reply::ToolCalls(calls) => (
            json!({
                "role": "assistant",
                "content": null,
                "tool_calls": calls.iter().map(encode_tool_call).collect::<Vec<_>>(),
            }),
            "tool_calls",
        ),
        Reply::Content(text) => (json!({"role": "assistant", "content": text}), "stop"),
    };
    let mut obj = Map::new();
    obj.insert("object".into(), json!("chat.completion"));
    obj.insert(
        "choices".into(),
        json!([{"index": 0, "message": message, "finish_reason": finish}]),
    );
    if let Some(u) = resp.usage {
        obj.insert(
            "usage".into(),
            json!({
                "prompt_tokens": u.prompt_tokens,
                "completion_tokens": u.completion_tokens,
                "total_tokens": u.total(),
            }),
        );
    }
    Value::Object(obj)
}

pub fn encode_response(resp: &CompletionResponse) -> String {
    response_to_value(resp).to_string()
}

pub fn parse_response(text: &str) -> Result<CompletionResponse, BackendError> {
    let v: Value =
        serde_json::from_str(text).map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
    let bad = |what: &str| BackendError::MalformedResponse(what.to_string());
    let message = v
        .pointer("/choices/0/message")
        .ok_or_else(|| bad("missing choices[0].message"))?;
    let calls = match message.get("tool_calls") {
        None | Some(Value::Null) => Vec::new(),
        Some(Value::Array(items)) => items
            .iter()
            .map(decode_tool_call)
            .collect::<Result<Vec<_>, _>>()?,
        Some(_) => return Err(bad("tool_calls must be an array")),
    };
    let reply = if !calls.is_empty() {
        Reply::ToolCalls(calls)
    } else {
        match message.get("content") {
            Some(Value::String(s)) => Reply::Content(s.clone()),
            _ => return Err(bad("neither tool_calls nor content")),
        }
    };
    let usage = match v.get("usage") {
        None | Some(Value::Null) => None,
        Some(u) => Some(Usage {
            prompt_tokens: u
                .get("prompt_tokens")
                .and_then(Value::as_u64)
                .ok_or_else(|| bad("usage.prompt_tokens"))?,
            completion_tokens: u
                .get("completion_tokens")
                .and_then(Value::as_u64)
                .ok_or_else(|| bad("usage.completion_tokens"))?,
        }),
    };
    Ok(CompletionResponse { reply, usage })
}
