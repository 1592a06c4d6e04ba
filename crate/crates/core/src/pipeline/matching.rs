//! The ask / evaluate / tell loop.

use std::sync::atomic::Ordering;

use super::{Agent, Best, Context, EvaluationRecord, Phase, PipelineError, PipelineState};
use crate::optimizer::OptimizerSession;
use crate::simulator::evaluate;

/// Run the optimizer until the budget is spent or a stop is requested.
///
/// The initial assignment is always evaluation 1. A state that already
/// holds evaluations (a resumed run) is replayed into a fresh optimizer
/// session first; the session is deterministic, so each replayed ask must
/// reproduce the recorded point.
pub fn matching_loop(state: &mut PipelineState, ctx: &mut Context) -> Result<(), PipelineError> {
    state.require(Phase::Matching)?;
    let space = state.space.clone().ok_or(PipelineError::Incomplete {
        agent: "parameterizer",
        missing: "parameters",
    })?;
    let config = state.optimizer_config.clone().ok_or(PipelineError::Incomplete {
        agent: "optimizer",
        missing: "a configuration",
    })?;
    let n_total = config.n_total;
    let mut session = OptimizerSession::new(config)?;
    let initial = space.initial();
    let initial_point = space.to_unit_cube(&initial)?;
    session.enqueue(initial_point.clone())?;

    for rec in &state.evaluations {
        let point = session.ask()?;
        if point != rec.point {
            return Err(PipelineError::Resume(format!(
                "evaluation {} was recorded at {:?} but the optimizer now asks {:?}",
                rec.iter, rec.point, point
            )));
        }
        session.tell(&point, rec.report.total)?;
    }

    let mut stopped = false;
    while state.evaluations.len() < n_total {
        if ctx.cancel.is_some_and(|c| c.load(Ordering::SeqCst)) {
            stopped = true;
            break;
        }
        let point = session.ask()?;
        let source = session
            .pending()
            .iter()
            .find(|a| a.point == point)
            .map_or("unknown", |a| a.source.label())
            .to_string();
        // The unit-cube round trip is inexact on log scales.
        let assignment = if point == initial_point {
            initial.clone()
        } else {
            space.from_unit_cube(&point)?
        };
        let (report, _) = evaluate(&space, &assignment, ctx.backend, &state.observations);
        session.tell(&point, report.total)?;
        let iter = state.evaluations.len() + 1;
        let metric = report.total;
        if iter == 1 {
            state.initial_metric = Some(metric);
        }
        if state.best.as_ref().is_none_or(|b| metric < b.metric) {
            state.best = Some(Best {
                iter,
                assignment: assignment.clone(),
                metric,
            });
        }
        state.evaluations.push(EvaluationRecord {
            iter,
            point,
            source,
            assignment,
            report,
        });
        if let Some(f) = ctx.on_evaluation.as_deref_mut() {
            f(state);
        }
    }

    let mut text = format!("{} evaluation(s) recorded", state.evaluations.len());
    if let Some(b) = &state.best {
        text.push_str(&format!("; best wNRMSE {:.4} at evaluation {}", b.metric, b.iter));
    }
    if stopped {
        text.push_str("; stopped on request");
    }
    text.push('.');
    state.say(Agent::Simulator, text);
    state.set_phase(Phase::Summarizing);
    Ok(())
}
