//! The tool vocabulary agents use to change the shared state.

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{Agent, DocStore, DoePlan, Message, PipelineState, ReservoirDescription, Role};
use crate::deck::Deck;
use crate::optimizer::{Acquisition, OptimizerConfig};
use crate::paramspace::{
    dry_run_validate, LiteralOnlyValidator, ParamError, ParameterSpace, ParameterSpec, RelpermValidator,
    ValidationReport,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "tool", content = "arguments", rename_all = "snake_case")]
pub enum ToolCall {
    SetDescription {
        description: ReservoirDescription,
    },
    SetPlan {
        plan: DoePlan,
    },
    LookupKeyword {
        keyword: String,
    },
    AddParameter {
        spec: ParameterSpec,
    },
    RemoveParameter {
        name: String,
    },
    SetBounds {
        name: String,
        lower: f64,
        upper: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        initial: Option<f64>,
    },
    DryRun {},
    SetOptimizerConfig {
        config: OptimizerConfig,
    },
    UpdateOptimizer {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        n_initial: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        n_total: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        acquisition: Option<Acquisition>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    AddRecommendation {
        text: String,
    },
}

impl ToolCall {
    pub fn name(&self) -> &'static str {
        match self {
            ToolCall::SetDescription { .. } => "set_description",
            ToolCall::SetPlan { .. } => "set_plan",
            ToolCall::LookupKeyword { .. } => "lookup_keyword",
            ToolCall::AddParameter { .. } => "add_parameter",
            ToolCall::RemoveParameter { .. } => "remove_parameter",
            ToolCall::SetBounds { .. } => "set_bounds",
            ToolCall::DryRun {} => "dry_run",
            ToolCall::SetOptimizerConfig { .. } => "set_optimizer_config",
            ToolCall::UpdateOptimizer { .. } => "update_optimizer",
            ToolCall::AddRecommendation { .. } => "add_recommendation",
        }
    }

    /// Split into the chat wire shape: name and JSON arguments.
    pub fn to_wire(&self) -> (String, serde_json::Value) {
        let mut v = serde_json::to_value(self).expect("tool call serializes");
        let args = v
            .get_mut("arguments")
            .map(serde_json::Value::take)
            .unwrap_or_else(|| json!({}));
        (self.name().to_string(), args)
    }

    pub fn from_wire(name: &str, arguments: serde_json::Value) -> Result<ToolCall, String> {
        serde_json::from_value(json!({ "tool": name, "arguments": arguments }))
            .map_err(|e| format!("bad call to {name}: {e}"))
    }

    /// Whether the call changes the parameter space.
    pub fn edits_space(&self) -> bool {
        matches!(
            self,
            ToolCall::AddParameter { .. } | ToolCall::RemoveParameter { .. } | ToolCall::SetBounds { .. }
        )
    }
}

fn apply_to_space(space: &ParameterSpace, call: &ToolCall) -> Result<ParameterSpace, ParamError> {
    match call {
        ToolCall::AddParameter { spec } => space.add_parameter(spec.clone()),
        ToolCall::RemoveParameter { name } => space.remove_parameter(name),
        ToolCall::SetBounds {
            name,
            lower,
            upper,
            initial,
        } => space.set_bounds(name, *lower, *upper, *initial),
        _ => Ok(space.clone()),
    }
}

pub(crate) fn validate(space: &ParameterSpace) -> ValidationReport {
    dry_run_validate(space, &[&RelpermValidator, &LiteralOnlyValidator::default()])
}

pub(crate) fn report_text(report: &ValidationReport) -> String {
    if report.ok {
        return "dry run passed at both corners".to_string();
    }
    let lines: Vec<String> = report
        .findings()
        .map(|(corner, f)| format!("{corner:?} corner: {:?}: {}", f.kind, f.message))
        .collect();
    format!("dry run failed:\n{}", lines.join("\n"))
}

/// Apply one call to the state; the text is what the caller sees.
pub(crate) fn apply_tool(
    state: &mut PipelineState,
    docs: Option<&DocStore>,
    call: &ToolCall,
) -> Result<String, String> {
    match call {
        ToolCall::SetDescription { description } => {
            if description.dims.contains(&0) {
                return Err("dims must be positive".into());
            }
            state.description = Some(description.clone());
            Ok("description stored".into())
        }
        ToolCall::SetPlan { plan } => {
            plan.check()?;
            state.plan = Some(plan.clone());
            Ok("plan stored".into())
        }
        ToolCall::LookupKeyword { keyword } => {
            let hits = docs.map(|d| d.lookup(keyword)).unwrap_or_default();
            if hits.is_empty() {
                return Ok(format!("no documentation for {keyword}"));
            }
            Ok(hits
                .iter()
                .map(|h| format!("[{}]\n{}", h.keyword, h.text.trim_end()))
                .collect::<Vec<_>>()
                .join("\n\n"))
        }
        ToolCall::AddParameter { .. } | ToolCall::RemoveParameter { .. } | ToolCall::SetBounds { .. } => {
            let space = state
                .space
                .clone()
                .unwrap_or_else(|| ParameterSpace::new(state.deck.clone()));
            let next = apply_to_space(&space, call).map_err(|e| e.to_string())?;
            let msg = format!("{} parameter(s): {}", next.dimension(), next.names().join(", "));
            state.space = Some(next);
            Ok(msg)
        }
        ToolCall::DryRun {} => {
            let space = state.space.as_ref().ok_or("no parameters defined")?;
            Ok(report_text(&validate(space)))
        }
        ToolCall::SetOptimizerConfig { config } => {
            config.validate().map_err(|e| e.to_string())?;
            state.optimizer_config = Some(config.clone());
            Ok("optimizer configuration stored".into())
        }
        ToolCall::UpdateOptimizer {
            n_initial,
            n_total,
            acquisition,
            seed,
        } => {
            let mut config = state.optimizer_config.clone().ok_or("no optimizer configuration yet")?;
            if let Some(v) = n_initial {
                config.n_initial = *v;
            }
            if let Some(v) = n_total {
                config.n_total = *v;
            }
            if let Some(v) = acquisition {
                config.acquisition = *v;
            }
            if let Some(v) = seed {
                config.seed = *v;
            }
            config.validate().map_err(|e| e.to_string())?;
            state.optimizer_config = Some(config);
            Ok("optimizer configuration updated".into())
        }
        ToolCall::AddRecommendation { text } => {
            let summary = state.summary.as_mut().ok_or("no summary yet")?;
            summary.recommendations.push(text.clone());
            Ok("recommendation added".into())
        }
    }
}

/// Record a call and its outcome in the transcript.
pub(crate) fn record(
    state: &mut PipelineState,
    docs: Option<&DocStore>,
    author: Agent,
    call: &ToolCall,
) -> Result<String, String> {
    state.messages.push(Message {
        role: Role::ToolCall,
        author,
        text: serde_json::to_string(call).expect("tool call serializes"),
    });
    let result = apply_tool(state, docs, call);
    let text = match &result {
        Ok(t) => t.clone(),
        Err(e) => format!("error: {e}"),
    };
    state.messages.push(Message {
        role: Role::ToolResult,
        author,
        text,
    });
    result
}

/// Rebuild the parameter space by replaying every space-editing tool call
/// in the transcript against the unparameterized deck. Calls that failed
/// when first made fail again and are skipped the same way.
pub fn replay_space(deck: &Deck, messages: &[Message]) -> ParameterSpace {
    let mut space = ParameterSpace::new(deck.clone());
    for m in messages.iter().filter(|m| m.role == Role::ToolCall) {
        let Ok(call) = serde_json::from_str::<ToolCall>(&m.text) else {
            continue;
        };
        if call.edits_space() {
            if let Ok(next) = apply_to_space(&space, &call) {
                space = next;
            }
        }
    }
    space
}
