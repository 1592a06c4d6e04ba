//! Report bundle: markdown, JSON summary and plot-ready CSV files.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{Phase, PipelineState};
use crate::paramspace::Assignment;

/// One point of the metric evolution plot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub iter: usize,
    pub values: Assignment,
    pub metric: f64,
    pub best_so_far: f64,
}

pub fn metric_rows(state: &PipelineState) -> Vec<MetricRow> {
    let mut best = f64::INFINITY;
    state
        .evaluations
        .iter()
        .map(|e| {
            best = best.min(e.report.total);
            MetricRow {
                iter: e.iter,
                values: e.assignment.clone(),
                metric: e.report.total,
                best_so_far: best,
            }
        })
        .collect()
}

/// `iter,source,<parameters...>,metric,best_so_far,failed`
pub fn evaluation_log_csv(state: &PipelineState) -> String {
    let names: Vec<&str> = state.specs().iter().map(|s| s.name.as_str()).collect();
    let mut out = String::from("iter,source");
    for n in &names {
        out.push(',');
        out.push_str(n);
    }
    out.push_str(",metric,best_so_far,failed\n");
    for (row, e) in metric_rows(state).iter().zip(&state.evaluations) {
        let _ = write!(out, "{},{}", e.iter, e.source);
        for n in &names {
            let _ = write!(out, ",{}", e.assignment.get(n).unwrap_or(f64::NAN));
        }
        let _ = writeln!(
            out,
            ",{},{},{}",
            row.metric,
            row.best_so_far,
            e.report.failure.is_some()
        );
    }
    out
}

/// Machine-readable outcome. Unfinished runs report only their phase.
pub fn report_json(state: &PipelineState) -> serde_json::Value {
    match (&state.summary, state.phase) {
        (Some(s), Phase::Done) => json!({
            "status": "done",
            "initial": s.initial_metric,
            "best": s.best_metric,
            "improvement_pct": s.improvement_pct,
            "improvement_rounded": s.improvement_rounded,
            "evaluations": s.evaluations,
            "all_failed": s.all_failed,
            "parameters": s.parameters,
            "quantities": s.quantities,
            "recommendations": s.recommendations,
        }),
        (_, Phase::Failed) => json!({
            "status": "failed",
            "failure": state.failure,
            "failed_after": state.history.iter().rev().nth(1).map(|p| p.label()),
            "evaluations": state.evaluations.len(),
            "initial": state.initial_metric,
            "best": state.best.as_ref().map(|b| b.metric),
        }),
        (_, phase) => json!({ "status": phase.label() }),
    }
}

fn num(v: f64) -> String {
    format!("{v:.6}")
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), num)
}

pub fn report_markdown(state: &PipelineState) -> String {
    let mut md = String::from("# History-matching report\n\n");
    if let Some(d) = &state.description {
        let _ = writeln!(md, "## Reservoir\n\n{}\n", d.summary);
    }
    if let Some(p) = &state.plan {
        let _ = writeln!(md, "## Plan\n\n{}\n", p.rationale);
    }
    if let Some(c) = &state.optimizer_config {
        let _ = writeln!(
            md,
            "## Optimizer\n\nGaussian process ({:?} kernel), {} Latin hypercube points, {} acquisition, {} evaluations, seed {}.\n",
            c.kernel,
            c.n_initial,
            c.acquisition.label(),
            c.n_total,
            c.seed
        );
    }
    if state.phase == Phase::Failed {
        let _ = writeln!(
            md,
            "## Failure\n\nThe run failed: {}\n",
            state.failure.as_deref().unwrap_or("unknown cause")
        );
    }
    let Some(s) = &state.summary else {
        if state.phase != Phase::Failed {
            let _ = writeln!(md, "The run is not finished (phase {}).", state.phase);
        }
        return md;
    };
    let _ = writeln!(
        md,
        "## Result\n\n| | wNRMSE |\n|---|---|\n| initial | {} |\n| best | {} |\n| improvement | {}% ({:.2}%) |\n\n{} evaluations.{}\n",
        num(s.initial_metric),
        num(s.best_metric),
        s.improvement_rounded,
        s.improvement_pct,
        s.evaluations,
        if s.all_failed { " Every simulation failed; the metrics are penalties." } else { "" }
    );
    if !s.parameters.is_empty() {
        md.push_str("## Parameters\n\n| name | lower | upper | initial | best |\n|---|---|---|---|---|\n");
        for p in &s.parameters {
            let _ = writeln!(
                md,
                "| {} | {} | {} | {} | {} |",
                p.name, p.lower, p.upper, p.initial, p.best
            );
        }
        md.push('\n');
    }
    if !s.quantities.is_empty() {
        md.push_str(
            "## Misfit by series\n\n| well | quantity | weight | NRMSE before | NRMSE after |\n|---|---|---|---|---|\n",
        );
        for q in &s.quantities {
            let _ = writeln!(
                md,
                "| {} | {} | {} | {} | {} |",
                q.well,
                q.quantity,
                num(q.weight),
                opt(q.before_nrmse),
                opt(q.after_nrmse)
            );
        }
        md.push('\n');
    }
    if !s.recommendations.is_empty() {
        md.push_str("## Recommendations\n\n");
        for r in &s.recommendations {
            let _ = writeln!(md, "- {r}");
        }
        md.push('\n');
    }
    md.push_str("Plot data: `metric_evolution.csv` and `series/<well>_<quantity>.csv`.\n");
    md
}

fn join_f64(values: &[f64], i: usize) -> String {
    values.get(i).map_or_else(String::new, |v| v.to_string())
}

/// Write `report.md`, `summary.json`, `evaluations.csv`,
/// `metric_evolution.csv` and `series/<well>_<quantity>.csv` into `dir`.
pub fn write_report_bundle(state: &PipelineState, dir: &Path) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.md"), report_markdown(state))?;
    let summary = serde_json::to_string_pretty(&report_json(state)).expect("plain JSON");
    fs::write(dir.join("summary.json"), summary + "\n")?;
    fs::write(dir.join("evaluations.csv"), evaluation_log_csv(state))?;
    let mut evolution = String::from("iter,metric,best_so_far\n");
    for r in metric_rows(state) {
        let _ = writeln!(evolution, "{},{},{}", r.iter, r.metric, r.best_so_far);
    }
    fs::write(dir.join("metric_evolution.csv"), evolution)?;
    if let Some(s) = &state.summary {
        let series_dir = dir.join("series");
        fs::create_dir_all(&series_dir)?;
        for b in &s.series {
            let mut csv = String::from("time,history,sim_before,sim_after\n");
            for (i, (t, h)) in b.times.iter().zip(&b.history).enumerate() {
                let _ = writeln!(csv, "{t},{h},{},{}", join_f64(&b.before, i), join_f64(&b.after, i));
            }
            let name = format!("{}_{}.csv", b.well, b.quantity);
            fs::write(series_dir.join(name), csv)?;
        }
    }
    Ok(())
}
