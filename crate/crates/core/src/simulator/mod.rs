//! The black box the optimizer queries: a deterministic single-phase proxy
//! simulator and a runner for external simulators.

mod case;
mod external;
mod proxy;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use case::{
    Connection, Control, ControlChange, Grid, SimCase, WellKind, WellSpec, DEFAULT_MAX_STEP_DAYS, DEFAULT_WELL_RADIUS,
    PEACEMAN_FACTOR,
};
pub use external::{run_external, RunnerConfig, WorkdirPolicy};
pub use proxy::{simulate_detailed, simulate_proxy, ProxyRun, StepRecord, CG_TOLERANCE, DARCY};

use crate::deck::Deck;
use crate::exec::{self, ExecMode};
use crate::misfit::{objective, MisfitError, MisfitReport, ObservationSet, Series};
use crate::paramspace::{Assignment, ParameterSpace};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid simulation case: {0}")]
    InvalidCase(String),
    #[error("linear solve did not converge after {iterations} iterations (relative residual {residual:e})")]
    NonConvergedLinearSolve { iterations: usize, residual: f64 },
    #[error("invalid runner configuration: {0}")]
    InvalidRunner(String),
    #[error("could not launch `{command}`: {message}")]
    LaunchFailure { command: String, message: String },
    #[error("simulator exceeded the {seconds} s timeout")]
    Timeout { seconds: f64 },
    #[error("simulator exited with status {code:?}:\n{output}")]
    NonZeroExit { code: Option<i32>, output: String },
    #[error("malformed results: {0}")]
    MalformedResults(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("parameter substitution failed: {0}")]
    Substitution(String),
    #[error(transparent)]
    Series(#[from] MisfitError),
}

/// Where simulations run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Backend {
    /// Built-in proxy; `max_step_days` overrides the deck-derived default.
    Proxy {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_step_days: Option<f64>,
    },
    /// External process; each distinct assignment runs in its own
    /// subdirectory of `work_root`.
    External { runner: RunnerConfig, work_root: PathBuf },
}

impl Default for Backend {
    fn default() -> Self {
        Backend::Proxy { max_step_days: None }
    }
}

impl Backend {
    /// Simulate a concrete deck. `tag` names the external run directory.
    pub fn run(&self, deck: &Deck, tag: &str) -> Result<Vec<Series>, SimError> {
        match self {
            Backend::Proxy { max_step_days } => {
                let mut case = SimCase::from_deck(deck)?;
                if let Some(dt) = max_step_days {
                    case.max_step_days = *dt;
                }
                simulate_proxy(&case)
            }
            Backend::External { runner, work_root } => run_external(runner, deck, &work_root.join(tag)),
        }
    }
}

/// Stable directory tag for an assignment (FNV-1a of its JSON).
fn run_tag(assignment: &Assignment) -> String {
    let json = serde_json::to_string(assignment).unwrap_or_default();
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in json.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("run-{h:016x}")
}

fn simulate_assignment(
    space: &ParameterSpace,
    assignment: &Assignment,
    backend: &Backend,
) -> Result<Vec<Series>, SimError> {
    let deck = space
        .substitute(assignment)
        .map_err(|e| SimError::Substitution(e.to_string()))?;
    backend.run(&deck, &run_tag(assignment))
}

/// Substitute, simulate and score. Failures never propagate: they become a
/// penalty report whose `failure` names the cause.
pub fn evaluate(
    space: &ParameterSpace,
    assignment: &Assignment,
    backend: &Backend,
    obs: &ObservationSet,
) -> (MisfitReport, Vec<Series>) {
    match simulate_assignment(space, assignment, backend) {
        Ok(series) => (objective(obs, &series), series),
        Err(e) => {
            tracing::warn!(error = %e, "simulation failed; charging the penalty");
            (MisfitReport::failed(obs.failure_penalty(), e.to_string()), Vec::new())
        }
    }
}

/// Evaluate several assignments, order-preserving.
pub fn evaluate_batch(
    space: &ParameterSpace,
    assignments: &[Assignment],
    backend: &Backend,
    obs: &ObservationSet,
    mode: ExecMode,
) -> Vec<(MisfitReport, Vec<Series>)> {
    exec::map(mode, assignments, |a| evaluate(space, a, backend, obs))
}

/// Synthetic observations from a hidden truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoHistory {
    pub observations: ObservationSet,
    /// For test assertions only; never shown to the matching loop.
    pub truth: Assignment,
}

impl PseudoHistory {
    pub fn truth_manifest_json(&self) -> String {
        serde_json::to_string_pretty(&serde_json::json!({ "truth": self.truth })).expect("plain map")
    }
}

/// Simulate `truth` and package the output as observations.
pub fn make_pseudo_history(
    space: &ParameterSpace,
    truth: &Assignment,
    backend: &Backend,
) -> Result<PseudoHistory, SimError> {
    let series = simulate_assignment(space, truth, backend)?;
    Ok(PseudoHistory {
        observations: ObservationSet::new(series)?,
        truth: truth.clone(),
    })
}
