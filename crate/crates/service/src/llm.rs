//! Chat-completion client over HTTP for the model-driven agents.
//!
//! Requests follow the common chat-completions shape: a `messages` list
//! starting with the system prompt, `tools` as function descriptors and a
//! `temperature`. The reply's first tool call, or else its text, becomes the
//! agent's next move.

use std::time::Duration;

use petromatch_core::pipeline::{ChatModelClient, ChatRequest, ChatResponse};
use serde_json::{json, Value};

pub const URL_VAR: &str = "PETROMATCH_LLM_URL";
pub const KEY_VAR: &str = "PETROMATCH_LLM_KEY";
pub const MODEL_VAR: &str = "PETROMATCH_LLM_MODEL";

#[derive(Clone, Debug, PartialEq)]
pub struct LlmConfig {
    pub url: String,
    pub key: Option<String>,
    pub model: Option<String>,
    pub timeout: Duration,
}

impl LlmConfig {
    /// `None` when `PETROMATCH_LLM_URL` is unset or empty.
    pub fn from_env() -> Option<LlmConfig> {
        let url = std::env::var(URL_VAR).ok().filter(|u| !u.trim().is_empty())?;
        Some(LlmConfig {
            url,
            key: std::env::var(KEY_VAR).ok().filter(|k| !k.is_empty()),
            model: std::env::var(MODEL_VAR).ok().filter(|m| !m.is_empty()),
            timeout: Duration::from_secs(120),
        })
    }
}

pub struct HttpChatClient {
    config: LlmConfig,
    agent: ureq::Agent,
}

impl HttpChatClient {
    pub fn new(config: LlmConfig) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(config.timeout).build();
        Self { config, agent }
    }
}

pub fn request_body(request: &ChatRequest, model: Option<&str>) -> Value {
    let mut messages = vec![json!({ "role": "system", "content": request.system })];
    for m in &request.messages {
        // Tool results travel as plain user turns: the transcript does not
        // keep provider call ids.
        let role = if m.role == "tool" { "user" } else { m.role.as_str() };
        messages.push(json!({ "role": role, "content": m.content }));
    }
    let tools: Vec<Value> = request
        .tools
        .iter()
        .map(|t| {
            json!({
                "type": "function",
                "function": { "name": t.name, "description": t.description, "parameters": t.parameters },
            })
        })
        .collect();
    let mut body = json!({
        "messages": messages,
        "tools": tools,
        "temperature": request.temperature,
    });
    if let Some(m) = model {
        body["model"] = json!(m);
    }
    body
}

pub fn parse_reply(reply: &Value) -> Result<ChatResponse, String> {
    let message = &reply["choices"][0]["message"];
    if message.is_null() {
        return Err("reply has no choices[0].message".into());
    }
    if let Some(call) = message["tool_calls"].as_array().and_then(|c| c.first()) {
        let function = &call["function"];
        let name = function["name"]
            .as_str()
            .ok_or("tool call without a function name")?
            .to_string();
        let arguments = match &function["arguments"] {
            Value::String(s) if s.trim().is_empty() => json!({}),
            Value::String(s) => serde_json::from_str(s).map_err(|e| format!("tool arguments are not JSON: {e}"))?,
            Value::Null => json!({}),
            other => other.clone(),
        };
        return Ok(ChatResponse::Tool { name, arguments });
    }
    Ok(ChatResponse::Text {
        text: message["content"].as_str().unwrap_or_default().to_string(),
    })
}

impl ChatModelClient for HttpChatClient {
    fn complete(&mut self, request: &ChatRequest) -> Result<ChatResponse, String> {
        let mut call = self.agent.post(&self.config.url);
        if let Some(key) = &self.config.key {
            call = call.set("Authorization", &format!("Bearer {key}"));
        }
        let reply: Value = call
            .send_json(request_body(request, self.config.model.as_deref()))
            .map_err(|e| format!("chat request failed: {e}"))?
            .into_json()
            .map_err(|e| format!("chat reply is not JSON: {e}"))?;
        parse_reply(&reply)
    }
}
