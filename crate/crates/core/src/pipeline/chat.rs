//! Pluggable chat-model client and the agent turn loop.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::tools::{record, ToolCall};
use super::{Agent, Context, Message, PipelineError, PipelineState, Role};

/// Tool rounds one agent may take before it is stopped.
pub const MAX_AGENT_TURNS: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToolDescriptor {
    pub name: String,
    pub description: String,
    /// JSON schema of the arguments object.
    pub parameters: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    /// `system`, `user`, `assistant` or `tool`.
    pub role: String,
    pub content: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system: String,
    pub messages: Vec<ChatMessage>,
    pub tools: Vec<ToolDescriptor>,
    pub temperature: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChatResponse {
    Text { text: String },
    Tool { name: String, arguments: serde_json::Value },
}

impl ChatResponse {
    pub fn call(call: &ToolCall) -> Self {
        let (name, arguments) = call.to_wire();
        ChatResponse::Tool { name, arguments }
    }
}

pub trait ChatModelClient: Send {
    fn complete(&mut self, request: &ChatRequest) -> Result<ChatResponse, String>;
}

/// Replays canned responses in order; records every request.
#[derive(Clone, Debug, Default)]
pub struct ScriptedClient {
    pub responses: VecDeque<ChatResponse>,
    pub requests: Vec<ChatRequest>,
}

impl ScriptedClient {
    pub fn new(responses: impl IntoIterator<Item = ChatResponse>) -> Self {
        Self {
            responses: responses.into_iter().collect(),
            requests: Vec::new(),
        }
    }

    /// A script that repeats the LLM-agent turns of a finished transcript:
    /// each agent's tool calls followed by its closing text.
    pub fn from_transcript(messages: &[Message]) -> Self {
        let responses = messages
            .iter()
            .filter(|m| is_model_agent(m.author))
            .filter_map(|m| match m.role {
                Role::ToolCall => serde_json::from_str::<ToolCall>(&m.text)
                    .ok()
                    .map(|c| ChatResponse::call(&c)),
                Role::Agent => Some(ChatResponse::Text { text: m.text.clone() }),
                Role::ToolResult => None,
            });
        Self::new(responses)
    }
}

impl ChatModelClient for ScriptedClient {
    fn complete(&mut self, request: &ChatRequest) -> Result<ChatResponse, String> {
        self.requests.push(request.clone());
        self.responses.pop_front().ok_or_else(|| "script exhausted".to_string())
    }
}

fn is_model_agent(agent: Agent) -> bool {
    matches!(
        agent,
        Agent::Reviewer | Agent::Planner | Agent::Parameterizer | Agent::Optimizer | Agent::Summarizer
    )
}

fn object(props: serde_json::Value, required: &[&str]) -> serde_json::Value {
    json!({ "type": "object", "properties": props, "required": required })
}

fn descriptor(name: &str) -> ToolDescriptor {
    let num = json!({ "type": "number" });
    let int = json!({ "type": "integer", "minimum": 0 });
    let text = json!({ "type": "string" });
    let (description, parameters) = match name {
        "set_description" => (
            "Store the reservoir description: model_type (blackoil|other), dims [nx,ny,nz], active_cells, n_producers, n_injectors, phases, has_faults, has_multipliers, summary, warnings.",
            object(json!({ "description": { "type": "object" } }), &["description"]),
        ),
        "set_plan" => (
            "Store the design of experiments: budget_tier (generous|moderate|conservative), max_parameters, n_initial, n_total, parameter_families (layer_permeability|relperm_endpoints|porosity_groups|fault_multipliers), target_improvement_pct, rationale.",
            object(json!({ "plan": { "type": "object" } }), &["plan"]),
        ),
        "lookup_keyword" => (
            "Return reference text for a deck keyword; exact name first, then keywords starting with the query.",
            object(json!({ "keyword": text }), &["keyword"]),
        ),
        "add_parameter" => (
            "Bind a numeric deck token to a new parameter. spec: name, lower, upper, initial, scale (linear|log10), unit, target {section, keyword, occurrence, record, item}; item is the raw token index before star expansion.",
            object(json!({ "spec": { "type": "object" } }), &["spec"]),
        ),
        "remove_parameter" => (
            "Unbind a parameter, restoring its initial value in the deck.",
            object(json!({ "name": text }), &["name"]),
        ),
        "set_bounds" => (
            "Change a parameter's bounds and optionally its initial value.",
            object(
                json!({ "name": text, "lower": num, "upper": num, "initial": num }),
                &["name", "lower", "upper"],
            ),
        ),
        "dry_run" => (
            "Substitute all-lower and all-upper values and validate both decks (relperm monotonicity, literal-only keywords).",
            object(json!({}), &[]),
        ),
        "set_optimizer_config" => (
            "Store the optimizer configuration: dimension, n_initial, n_total, acquisition (EI|PI|LCB|GP_HEDGE), seed, kernel, ei_xi, lcb_kappa, hedge_eta, candidate_pool, penalty_value.",
            object(json!({ "config": { "type": "object" } }), &["config"]),
        ),
        "update_optimizer" => (
            "Change selected optimizer settings.",
            object(
                json!({ "n_initial": int, "n_total": int, "acquisition": text, "seed": int }),
                &[],
            ),
        ),
        "add_recommendation" => (
            "Append a recommendation to the summary report.",
            object(json!({ "text": text }), &["text"]),
        ),
        _ => ("", object(json!({}), &[])),
    };
    ToolDescriptor {
        name: name.to_string(),
        description: description.to_string(),
        parameters,
    }
}

pub(crate) fn tool_names(agent: Agent) -> &'static [&'static str] {
    match agent {
        Agent::Reviewer => &["lookup_keyword", "set_description"],
        Agent::Planner => &["set_plan"],
        Agent::Parameterizer => &[
            "lookup_keyword",
            "add_parameter",
            "remove_parameter",
            "set_bounds",
            "dry_run",
        ],
        Agent::Optimizer => &["set_optimizer_config"],
        Agent::Summarizer => &["add_recommendation"],
        Agent::Simulator | Agent::User => &[],
    }
}

/// Tool descriptors offered to `agent`.
pub fn descriptors(agent: Agent) -> Vec<ToolDescriptor> {
    tool_names(agent).iter().map(|n| descriptor(n)).collect()
}

fn system_prompt(agent: Agent) -> &'static str {
    match agent {
        Agent::Reviewer => "You review a reservoir simulation deck and store a concise description of it for the agents that follow.",
        Agent::Planner => "You plan the design of experiments for history matching: which parameter families to vary and how many simulations to spend, generous for light models and conservative for heavy ones.",
        Agent::Parameterizer => "You choose deck values to vary for history matching, give them physically sensible bounds, and dry-run the extremes until validation passes.",
        Agent::Optimizer => "You configure the Bayesian optimizer: initial Latin hypercube size, total budget and acquisition function.",
        Agent::Summarizer => "You summarize the history-matching run and recommend next steps when the target improvement was missed.",
        Agent::Simulator | Agent::User => "",
    }
}

fn chat_history(messages: &[Message]) -> Vec<ChatMessage> {
    messages
        .iter()
        .map(|m| ChatMessage {
            role: match m.role {
                Role::Agent if m.author == Agent::User => "user",
                Role::Agent | Role::ToolCall => "assistant",
                Role::ToolResult => "tool",
            }
            .to_string(),
            content: format!("[{}] {}", m.author.label(), m.text),
        })
        .collect()
}

/// What the built-in rules would do: tool calls, then closing text.
pub(crate) struct Script {
    pub calls: Vec<ToolCall>,
    pub text: String,
}

/// Run one agent's turn: the rules' script, or a dialogue with the
/// configured client restricted to the agent's tools.
pub(crate) fn run_agent(
    state: &mut PipelineState,
    ctx: &mut Context,
    agent: Agent,
    briefing: String,
    rules: impl FnOnce(&PipelineState) -> Result<Script, PipelineError>,
) -> Result<(), PipelineError> {
    let docs = ctx.docs;
    let Some(client) = ctx.client.as_deref_mut() else {
        let script = rules(state)?;
        for call in &script.calls {
            record(state, docs, agent, call).map_err(|message| PipelineError::Tool {
                tool: call.name().to_string(),
                message,
            })?;
        }
        state.say(agent, script.text);
        return Ok(());
    };
    let allowed = tool_names(agent);
    for _ in 0..MAX_AGENT_TURNS {
        let mut messages = chat_history(&state.messages);
        messages.push(ChatMessage {
            role: "user".into(),
            content: briefing.clone(),
        });
        let request = ChatRequest {
            system: system_prompt(agent).to_string(),
            messages,
            tools: descriptors(agent),
            temperature: 0.0,
        };
        match client.complete(&request).map_err(PipelineError::Client)? {
            ChatResponse::Text { text } => {
                state.say(agent, text);
                return Ok(());
            }
            ChatResponse::Tool { name, arguments } => {
                if !allowed.contains(&name.as_str()) {
                    state.messages.push(Message {
                        role: Role::ToolResult,
                        author: agent,
                        text: format!("error: tool {name} is not available to the {}", agent.label()),
                    });
                    continue;
                }
                match ToolCall::from_wire(&name, arguments) {
                    Ok(call) => {
                        // Errors go back to the model as the tool result.
                        let _ = record(state, docs, agent, &call);
                    }
                    Err(e) => state.messages.push(Message {
                        role: Role::ToolResult,
                        author: agent,
                        text: format!("error: {e}"),
                    }),
                }
            }
        }
    }
    Err(PipelineError::Client(format!(
        "{} did not finish within {MAX_AGENT_TURNS} turns",
        agent.label()
    )))
}
