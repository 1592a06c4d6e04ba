//! Human-in-the-loop checkpoints: view, edit, approve.

use serde::{Deserialize, Serialize};

use super::tools::{record, report_text, validate, ToolCall};
use super::{Agent, Phase, PipelineError, PipelineState};
use crate::optimizer::OptimizerConfig;
use crate::paramspace::ParameterSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    Parameters,
    Optimizer,
}

impl CheckpointKind {
    pub fn of(phase: Phase) -> Option<CheckpointKind> {
        match phase {
            Phase::CheckpointParams => Some(CheckpointKind::Parameters),
            Phase::CheckpointOptimizer => Some(CheckpointKind::Optimizer),
            _ => None,
        }
    }

    fn allows(self, call: &ToolCall) -> bool {
        match self {
            CheckpointKind::Parameters => matches!(
                call,
                ToolCall::AddParameter { .. } | ToolCall::RemoveParameter { .. } | ToolCall::SetBounds { .. }
            ),
            CheckpointKind::Optimizer => {
                matches!(call, ToolCall::SetBounds { .. } | ToolCall::UpdateOptimizer { .. })
            }
        }
    }
}

/// What a checkpoint shows for editing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointView {
    pub kind: CheckpointKind,
    pub version: u64,
    pub parameters: Vec<ParameterSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<OptimizerConfig>,
}

pub fn checkpoint_view(state: &PipelineState) -> Option<CheckpointView> {
    let kind = CheckpointKind::of(state.phase)?;
    Some(CheckpointView {
        kind,
        version: state.checkpoint_version,
        parameters: state.specs().to_vec(),
        optimizer: match kind {
            CheckpointKind::Parameters => None,
            CheckpointKind::Optimizer => state.optimizer_config.clone(),
        },
    })
}

/// Apply edits atomically, then advance if `approve`. A rejected edit
/// leaves the state untouched. Approving an empty parameter set fails the
/// run.
pub fn checkpoint_apply(state: &mut PipelineState, edits: &[ToolCall], approve: bool) -> Result<(), PipelineError> {
    let kind = CheckpointKind::of(state.phase).ok_or(PipelineError::IllegalPhase {
        expected: "a checkpoint".into(),
        actual: state.phase,
    })?;
    if !edits.is_empty() {
        let mut next = state.clone();
        for edit in edits {
            if !kind.allows(edit) {
                return Err(PipelineError::InvalidEdit(format!(
                    "{} is not allowed at the {kind:?} checkpoint",
                    edit.name()
                )));
            }
            record(&mut next, None, Agent::User, edit).map_err(PipelineError::InvalidEdit)?;
        }
        if let Some(space) = next.space.as_ref().filter(|s| s.dimension() > 0) {
            let report = validate(space);
            if !report.ok {
                return Err(PipelineError::InvalidEdit(report_text(&report)));
            }
        }
        if kind == CheckpointKind::Optimizer {
            let dimension = next.space.as_ref().map_or(0, |s| s.dimension());
            if let Some(config) = &next.optimizer_config {
                config
                    .validate()
                    .map_err(|e| PipelineError::InvalidEdit(e.to_string()))?;
                if config.dimension != dimension {
                    return Err(PipelineError::InvalidEdit(
                        "optimizer dimension no longer matches the parameters".into(),
                    ));
                }
            }
        }
        next.checkpoint_version += 1;
        *state = next;
    }
    if approve {
        if kind == CheckpointKind::Parameters && state.space.as_ref().is_none_or(|s| s.dimension() == 0) {
            state.fail(
                Agent::User,
                &PipelineError::NoParametersFound("every parameter was removed at the checkpoint".into()),
            );
            return Ok(());
        }
        let to = state.phase.next().expect("checkpoints are not terminal");
        state.set_phase(to);
    }
    Ok(())
}
