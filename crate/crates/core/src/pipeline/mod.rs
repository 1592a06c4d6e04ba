//! The agent pipeline: reviewer, planner, parameterizer, optimizer, the
//! simulation loop and the summarizer acting on one shared state, with two
//! human-in-the-loop checkpoints.
//!
//! Agents change the state only through [`ToolCall`]s. The built-in rules
//! compute those calls directly; a [`ChatModelClient`] can be plugged in
//! instead and is offered the same tools, so a client that returns the
//! rules' call sequence produces the same state.

mod agents;
mod chat;
mod checkpoint;
mod docs;
mod matching;
mod report;
mod tools;

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::AtomicBool;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::deck::Deck;
use crate::exec::ExecMode;
use crate::misfit::{MisfitReport, ObservationSet, QuantityKind};
use crate::optimizer::{OptimizerConfig, OptimizerError};
use crate::paramspace::{Assignment, DefaultBounds, ParamError, ParameterSpace, ParameterSpec};
use crate::simulator::Backend;

pub use agents::{
    baseline_evaluation, describe_deck, family_candidates, improvement_pct, optimizer_agent, parameterizer_agent,
    planner_agent, repair_space, reviewer_agent, round_half_up, summarizer_agent, RepairOutcome, MAX_REPAIR_ROUNDS,
};
pub use chat::{
    descriptors, ChatMessage, ChatModelClient, ChatRequest, ChatResponse, ScriptedClient, ToolDescriptor,
    MAX_AGENT_TURNS,
};
pub use checkpoint::{checkpoint_apply, checkpoint_view, CheckpointKind, CheckpointView};
pub use docs::{DocSnippet, DocStore};
pub use matching::matching_loop;
pub use report::{evaluation_log_csv, metric_rows, report_json, report_markdown, write_report_bundle, MetricRow};
pub use tools::{replay_space, ToolCall};

/// Version of the serialized [`PipelineState`] layout.
pub const STATE_SCHEMA: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Created,
    Reviewed,
    Planned,
    Parameterized,
    CheckpointParams,
    OptimizerReady,
    CheckpointOptimizer,
    Matching,
    Summarizing,
    Done,
    Failed,
}

impl Phase {
    /// The success path, in order. `Failed` is reachable from any
    /// non-terminal phase.
    pub const ORDER: [Phase; 10] = [
        Phase::Created,
        Phase::Reviewed,
        Phase::Planned,
        Phase::Parameterized,
        Phase::CheckpointParams,
        Phase::OptimizerReady,
        Phase::CheckpointOptimizer,
        Phase::Matching,
        Phase::Summarizing,
        Phase::Done,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Phase::Created => "created",
            Phase::Reviewed => "reviewed",
            Phase::Planned => "planned",
            Phase::Parameterized => "parameterized",
            Phase::CheckpointParams => "checkpoint_params",
            Phase::OptimizerReady => "optimizer_ready",
            Phase::CheckpointOptimizer => "checkpoint_optimizer",
            Phase::Matching => "matching",
            Phase::Summarizing => "summarizing",
            Phase::Done => "done",
            Phase::Failed => "failed",
        }
    }

    pub fn next(self) -> Option<Phase> {
        let i = Self::ORDER.iter().position(|p| *p == self)?;
        Self::ORDER.get(i + 1).copied()
    }

    pub fn is_checkpoint(self) -> bool {
        matches!(self, Phase::CheckpointParams | Phase::CheckpointOptimizer)
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, Phase::Done | Phase::Failed)
    }

    /// Whether `self -> to` is an edge of the phase machine.
    pub fn can_move_to(self, to: Phase) -> bool {
        if to == Phase::Failed {
            return !self.is_terminal();
        }
        self.next() == Some(to)
    }

    /// Position on the success path; `Failed` has none.
    pub fn rank(self) -> Option<usize> {
        Self::ORDER.iter().position(|p| *p == self)
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Phase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ORDER
            .into_iter()
            .chain([Phase::Failed])
            .find(|p| p.label() == s)
            .ok_or_else(|| format!("unknown phase `{s}`"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Agent {
    Reviewer,
    Planner,
    Parameterizer,
    Optimizer,
    Simulator,
    Summarizer,
    User,
}

impl Agent {
    pub fn label(self) -> &'static str {
        match self {
            Agent::Reviewer => "reviewer",
            Agent::Planner => "planner",
            Agent::Parameterizer => "parameterizer",
            Agent::Optimizer => "optimizer",
            Agent::Simulator => "simulator",
            Agent::Summarizer => "summarizer",
            Agent::User => "user",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// Free text written by an agent.
    Agent,
    /// A tool invocation; the text is the call's JSON.
    ToolCall,
    /// What the tool returned.
    ToolResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub author: Agent,
    pub text: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelType {
    Blackoil,
    Other,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReservoirDescription {
    pub model_type: ModelType,
    pub dims: [usize; 3],
    pub active_cells: usize,
    pub n_producers: usize,
    pub n_injectors: usize,
    pub phases: Vec<String>,
    pub has_faults: bool,
    pub has_multipliers: bool,
    pub summary: String,
    #[serde(default)]
    pub warnings: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetTier {
    Generous,
    Moderate,
    Conservative,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    LayerPermeability,
    RelpermEndpoints,
    PorosityGroups,
    FaultMultipliers,
}

impl Family {
    pub fn label(self) -> &'static str {
        match self {
            Family::LayerPermeability => "layer permeability",
            Family::RelpermEndpoints => "relative permeability endpoints",
            Family::PorosityGroups => "porosity groups",
            Family::FaultMultipliers => "fault transmissibility multipliers",
        }
    }

    /// The family a parameter created by the rule-based parameterizer
    /// belongs to, judged by its name.
    pub fn of_parameter(name: &str) -> Option<Family> {
        [
            ("PERM_", Family::LayerPermeability),
            ("SWOF_", Family::RelpermEndpoints),
            ("SGOF_", Family::RelpermEndpoints),
            ("PORO_", Family::PorosityGroups),
            ("FLT_", Family::FaultMultipliers),
        ]
        .into_iter()
        .find(|(prefix, _)| name.starts_with(prefix))
        .map(|(_, f)| f)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoePlan {
    pub budget_tier: BudgetTier,
    pub max_parameters: usize,
    pub n_initial: usize,
    pub n_total: usize,
    pub parameter_families: Vec<Family>,
    /// Improvement (percent) below which the summary carries
    /// recommendations.
    pub target_improvement_pct: f64,
    pub rationale: String,
}

impl DoePlan {
    pub fn check(&self) -> Result<(), String> {
        if self.max_parameters == 0 {
            return Err("max_parameters must be at least 1".into());
        }
        if self.n_total == 0 || self.n_initial > self.n_total {
            return Err("n_initial must not exceed a positive n_total".into());
        }
        if !self.target_improvement_pct.is_finite() {
            return Err("target improvement must be finite".into());
        }
        Ok(())
    }
}

/// Budget for one planner tier.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TierBudget {
    pub max_parameters: usize,
    pub n_initial: usize,
    pub n_total: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    /// Active cells up to which the generous tier applies.
    pub generous_max_cells: usize,
    /// Active cells up to which the moderate tier applies.
    pub moderate_max_cells: usize,
    pub generous: TierBudget,
    pub moderate: TierBudget,
    pub conservative: TierBudget,
    pub target_improvement_pct: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            generous_max_cells: 1_000,
            moderate_max_cells: 50_000,
            generous: TierBudget {
                max_parameters: 10,
                n_initial: 32,
                n_total: 80,
            },
            moderate: TierBudget {
                max_parameters: 10,
                n_initial: 32,
                n_total: 64,
            },
            conservative: TierBudget {
                max_parameters: 20,
                n_initial: 32,
                n_total: 100,
            },
            target_improvement_pct: 50.0,
        }
    }
}

/// Run-wide settings the agents read from the state.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub seed: u64,
    /// Overrides the planned evaluation budget.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<usize>,
    #[serde(default)]
    pub planner: PlannerConfig,
    #[serde(default)]
    pub bounds: DefaultBounds,
    #[serde(default)]
    pub exec: ExecMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    /// 1-based position in the log.
    pub iter: usize,
    /// The optimizer's unit-cube point.
    pub point: Vec<f64>,
    pub source: String,
    pub assignment: Assignment,
    pub report: MisfitReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Best {
    pub iter: usize,
    pub assignment: Assignment,
    pub metric: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantityRow {
    pub well: String,
    pub quantity: QuantityKind,
    pub weight: f64,
    pub before_nrmse: Option<f64>,
    pub after_nrmse: Option<f64>,
    pub before_wnrmse: f64,
    pub after_wnrmse: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterRow {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub initial: f64,
    pub best: f64,
}

/// Historical and simulated values on the historical time grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesBundle {
    pub well: String,
    pub quantity: QuantityKind,
    pub unit: String,
    pub times: Vec<f64>,
    pub history: Vec<f64>,
    /// Empty when that run failed.
    pub before: Vec<f64>,
    pub after: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryReport {
    pub initial_metric: f64,
    pub best_metric: f64,
    pub improvement_pct: f64,
    /// `improvement_pct` rounded half up to a whole percent.
    pub improvement_rounded: f64,
    pub evaluations: usize,
    /// Every simulation failed and the metrics are penalties.
    pub all_failed: bool,
    pub quantities: Vec<QuantityRow>,
    pub parameters: Vec<ParameterRow>,
    pub recommendations: Vec<String>,
    pub series: Vec<SeriesBundle>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineState {
    pub schema: u32,
    pub messages: Vec<Message>,
    pub deck: Deck,
    pub observations: ObservationSet,
    pub options: RunOptions,
    pub description: Option<ReservoirDescription>,
    /// The unparameterized deck's evaluation, handed to the planner.
    pub baseline: Option<MisfitReport>,
    pub plan: Option<DoePlan>,
    pub space: Option<ParameterSpace>,
    pub optimizer_config: Option<OptimizerConfig>,
    pub evaluations: Vec<EvaluationRecord>,
    pub initial_metric: Option<f64>,
    pub best: Option<Best>,
    pub summary: Option<SummaryReport>,
    pub phase: Phase,
    /// Every phase entered, starting with `created`.
    pub history: Vec<Phase>,
    /// Bumped by every applied checkpoint edit.
    pub checkpoint_version: u64,
    pub failure: Option<String>,
}

impl PipelineState {
    pub fn new(deck: Deck, observations: ObservationSet, options: RunOptions) -> Self {
        Self {
            schema: STATE_SCHEMA,
            messages: Vec::new(),
            deck,
            observations,
            options,
            description: None,
            baseline: None,
            plan: None,
            space: None,
            optimizer_config: None,
            evaluations: Vec::new(),
            initial_metric: None,
            best: None,
            summary: None,
            phase: Phase::Created,
            history: vec![Phase::Created],
            checkpoint_version: 0,
            failure: None,
        }
    }

    pub fn say(&mut self, author: Agent, text: impl Into<String>) {
        self.messages.push(Message {
            role: Role::Agent,
            author,
            text: text.into(),
        });
    }

    pub(crate) fn set_phase(&mut self, to: Phase) {
        assert!(
            self.phase.can_move_to(to),
            "illegal phase transition {} -> {}",
            self.phase,
            to
        );
        self.phase = to;
        self.history.push(to);
    }

    pub(crate) fn fail(&mut self, author: Agent, error: &PipelineError) {
        let cause = error.to_string();
        self.say(author, format!("failed: {cause}"));
        self.failure = Some(cause);
        self.set_phase(Phase::Failed);
    }

    pub(crate) fn require(&self, phase: Phase) -> Result<(), PipelineError> {
        if self.phase == phase {
            Ok(())
        } else {
            Err(PipelineError::IllegalPhase {
                expected: phase.label().to_string(),
                actual: self.phase,
            })
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("state serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let state: Self = serde_json::from_str(text).map_err(|e| PipelineError::State(e.to_string()))?;
        if state.schema != STATE_SCHEMA {
            return Err(PipelineError::State(format!(
                "state schema {} is not supported (expected {STATE_SCHEMA})",
                state.schema
            )));
        }
        Ok(state)
    }

    /// Parameter specs at the moment, empty before parameterization.
    pub fn specs(&self) -> &[ParameterSpec] {
        self.space.as_ref().map_or(&[], |s| s.specs())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error("deck unreadable: {0}")]
    DeckUnreadable(String),
    #[error("phase is {actual}, expected {expected}")]
    IllegalPhase { expected: String, actual: Phase },
    #[error("no parameters found: {0}")]
    NoParametersFound(String),
    #[error("validation failed: {0}")]
    ValidationFailed(String),
    #[error("invalid edit: {0}")]
    InvalidEdit(String),
    #[error("{agent} finished without {missing}")]
    Incomplete { agent: &'static str, missing: &'static str },
    #[error("tool {tool} failed: {message}")]
    Tool { tool: String, message: String },
    #[error("chat model: {0}")]
    Client(String),
    #[error("cannot resume the evaluation log: {0}")]
    Resume(String),
    #[error("state: {0}")]
    State(String),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error(transparent)]
    Param(#[from] ParamError),
}

/// What the pipeline needs besides its state.
pub struct Context<'a> {
    pub backend: &'a Backend,
    pub docs: Option<&'a DocStore>,
    pub client: Option<&'a mut dyn ChatModelClient>,
    /// Checked between evaluations of the matching loop.
    pub cancel: Option<&'a AtomicBool>,
    /// Called after every recorded evaluation.
    pub on_evaluation: Option<&'a mut dyn FnMut(&PipelineState)>,
}

impl<'a> Context<'a> {
    pub fn new(backend: &'a Backend) -> Self {
        Self {
            backend,
            docs: None,
            client: None,
            cancel: None,
            on_evaluation: None,
        }
    }
}

/// A checkpoint response: edits to apply, then approve or stay.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointDecision {
    #[serde(default)]
    pub edits: Vec<ToolCall>,
    #[serde(default)]
    pub approve: bool,
}

impl CheckpointDecision {
    pub fn approve() -> Self {
        Self {
            edits: Vec::new(),
            approve: true,
        }
    }
}

pub enum Interaction<'a> {
    /// Approve every checkpoint unchanged.
    AutoApprove,
    Handler(&'a mut dyn FnMut(&PipelineState) -> CheckpointDecision),
}

/// Run one agent step for the current phase. Agent failures move the state
/// to `failed`; checkpoints and terminal phases are left alone.
pub fn step(state: &mut PipelineState, ctx: &mut Context) {
    let (agent, result) = match state.phase {
        Phase::Created => (Agent::Reviewer, reviewer_agent(state, ctx)),
        Phase::Reviewed => (
            Agent::Planner,
            baseline_evaluation(state, ctx).and_then(|()| planner_agent(state, ctx)),
        ),
        Phase::Planned => (Agent::Parameterizer, parameterizer_agent(state, ctx)),
        Phase::Parameterized => {
            state.set_phase(Phase::CheckpointParams);
            return;
        }
        Phase::OptimizerReady => (Agent::Optimizer, optimizer_agent(state, ctx)),
        Phase::Matching => (Agent::Simulator, matching_loop(state, ctx)),
        Phase::Summarizing => (Agent::Summarizer, summarizer_agent(state, ctx)),
        _ => return,
    };
    if let Err(e) = result {
        state.fail(agent, &e);
    }
}

/// Whether `advance(state, _, until)` may run: the state is not terminal
/// and `until` is not behind the current phase.
pub fn check_advance(state: &PipelineState, until: Option<Phase>) -> Result<(), PipelineError> {
    if state.phase.is_terminal() {
        return Err(PipelineError::IllegalPhase {
            expected: "a running phase".into(),
            actual: state.phase,
        });
    }
    if let Some(target) = until {
        match (target.rank(), state.phase.rank()) {
            (Some(t), Some(c)) if t >= c => {}
            _ => {
                return Err(PipelineError::IllegalPhase {
                    expected: format!("a phase before {target}"),
                    actual: state.phase,
                })
            }
        }
    }
    Ok(())
}

/// True once `advance` has nothing left to do without outside input.
pub fn should_pause(state: &PipelineState, until: Option<Phase>) -> bool {
    state.phase.is_terminal() || state.phase.is_checkpoint() || Some(state.phase) == until
}

/// Run agents until `until` is reached, a checkpoint waits for approval or
/// the run ends.
pub fn advance(state: &mut PipelineState, ctx: &mut Context, until: Option<Phase>) -> Result<(), PipelineError> {
    check_advance(state, until)?;
    while !should_pause(state, until) {
        step(state, ctx);
    }
    Ok(())
}

/// Drive `state` to `done` or `failed`, answering checkpoints through
/// `interaction`. Returns early if a handler declines to approve.
pub fn drive(state: &mut PipelineState, ctx: &mut Context, interaction: &mut Interaction) {
    loop {
        if state.phase.is_terminal() {
            return;
        }
        if state.phase.is_checkpoint() {
            let decision = match interaction {
                Interaction::AutoApprove => CheckpointDecision::approve(),
                Interaction::Handler(h) => h(state),
            };
            if let Err(e) = checkpoint_apply(state, &decision.edits, decision.approve) {
                state.fail(Agent::User, &e);
                return;
            }
            if !decision.approve {
                return;
            }
            continue;
        }
        // Not terminal, so advance cannot refuse.
        let _ = advance(state, ctx, None);
    }
}

/// Reviewer through summarizer on a fresh state.
pub fn run_pipeline(
    deck: Deck,
    observations: ObservationSet,
    backend: &Backend,
    mut interaction: Interaction,
    options: RunOptions,
) -> PipelineState {
    let mut state = PipelineState::new(deck, observations, options);
    let mut ctx = Context::new(backend);
    drive(&mut state, &mut ctx, &mut interaction);
    state
}
