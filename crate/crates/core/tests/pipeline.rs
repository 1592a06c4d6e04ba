use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;

use petromatch_core::deck::{Deck, TokenPath};
use petromatch_core::misfit::ObservationSet;
use petromatch_core::optimizer::Acquisition;
use petromatch_core::paramspace::{
    dry_run_validate, Assignment, FindingKind, ParameterSpace, ParameterSpec, RelpermValidator, Scale,
};
use petromatch_core::pipeline::{
    advance, checkpoint_apply, checkpoint_view, describe_deck, drive, evaluation_log_csv, improvement_pct,
    matching_loop, metric_rows, optimizer_agent, planner_agent, repair_space, replay_space, report_json, round_half_up,
    run_pipeline, summarizer_agent, write_report_bundle, Agent, BudgetTier, CheckpointDecision, CheckpointKind,
    Context, DocStore, EvaluationRecord, Family, Interaction, ModelType, Phase, PipelineError, PipelineState, Role,
    RunOptions, ScriptedClient, ToolCall,
};
use petromatch_core::simulator::{make_pseudo_history, Backend, RunnerConfig};

fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(rel)
}

fn deck(name: &str) -> Deck {
    Deck::from_path(&fixture(&format!("decks/{name}"))).unwrap()
}

fn perm_spec(layer: usize, initial: f64) -> ParameterSpec {
    ParameterSpec {
        name: format!("PERM_L{}", layer + 1),
        lower: initial / 10.0,
        upper: initial * 10.0,
        initial,
        scale: Scale::Log10,
        unit: "mD".into(),
        target: TokenPath {
            section: "GRID".into(),
            keyword: "PERMX".into(),
            occurrence: 0,
            record: 0,
            item: layer,
        },
    }
}

/// Observations from the SPE1 proxy with layer permeabilities (400, 60, 300).
fn spe1_history() -> ObservationSet {
    let mut space = ParameterSpace::new(deck("spe1.DATA"));
    for (l, v) in [500.0, 50.0, 200.0].into_iter().enumerate() {
        space = space.add_parameter(perm_spec(l, v)).unwrap();
    }
    let truth: Assignment = [("PERM_L1", 400.0), ("PERM_L2", 60.0), ("PERM_L3", 300.0)]
        .into_iter()
        .collect();
    make_pseudo_history(&space, &truth, &Backend::default())
        .unwrap()
        .observations
}

fn options(seed: u64, budget: usize) -> RunOptions {
    RunOptions {
        seed,
        budget: Some(budget),
        ..RunOptions::default()
    }
}

fn spe1_state(seed: u64, budget: usize) -> PipelineState {
    PipelineState::new(deck("spe1.DATA"), spe1_history(), options(seed, budget))
}

/// Drive a fresh state to `phase`, approving checkpoints on the way.
fn state_at(phase: Phase, seed: u64, budget: usize) -> PipelineState {
    let backend = Backend::default();
    let mut state = spe1_state(seed, budget);
    let mut ctx = Context::new(&backend);
    while state.phase != phase {
        if state.phase.is_checkpoint() {
            checkpoint_apply(&mut state, &[], true).unwrap();
        } else {
            advance(&mut state, &mut ctx, Some(phase)).unwrap();
        }
        assert!(!state.phase.is_terminal(), "stopped at {:?}", state.failure);
    }
    state
}

fn failing_backend(root: &Path) -> Backend {
    let script = fixture("fake_sim/fail.sh");
    Backend::External {
        runner: RunnerConfig::new(format!("sh '{}' {{deck}} {{outdir}}", script.display()), 10.0),
        work_root: root.to_path_buf(),
    }
}

#[test]
fn reviewer_describes_spe1() {
    let d = describe_deck(&deck("spe1.DATA")).unwrap();
    assert_eq!(d.dims, [10, 10, 3]);
    assert_eq!(d.active_cells, 300);
    assert_eq!((d.n_producers, d.n_injectors), (1, 1));
    assert_eq!(d.model_type, ModelType::Blackoil);
    assert!(d.warnings.is_empty());
}

#[test]
fn reviewer_describes_spe9() {
    let d = describe_deck(&deck("spe9.DATA")).unwrap();
    assert_eq!(d.dims, [24, 25, 15]);
    assert_eq!(d.active_cells, 9000);
    assert_eq!((d.n_producers, d.n_injectors), (25, 1));
    assert!(d.has_multipliers);
}

#[test]
fn reviewer_warns_about_missing_wells() {
    let text = "RUNSPEC\nOIL\nWATER\nDIMENS\n 2 2 1 /\nGRID\nPORO\n 4*0.2 /\n";
    let d = describe_deck(&Deck::parse(text, &|_| None).unwrap()).unwrap();
    assert_eq!((d.n_producers, d.n_injectors), (0, 0));
    assert!(d.warnings.iter().any(|w| w.contains("WELSPECS")), "{:?}", d.warnings);
}

#[test]
fn reviewer_rejects_deck_without_dimensions() {
    let d = Deck::parse("RUNSPEC\nOIL\n", &|_| None).unwrap();
    assert!(matches!(describe_deck(&d), Err(PipelineError::DeckUnreadable(_))));
}

#[test]
fn planner_picks_tier_by_active_cells() {
    let backend = Backend::default();
    for (cells, tier, n_total, max_parameters) in [
        (300, BudgetTier::Generous, 80, 10),
        (9000, BudgetTier::Moderate, 64, 10),
        (44_927, BudgetTier::Moderate, 64, 10),
        (120_000, BudgetTier::Conservative, 100, 20),
    ] {
        let mut state = PipelineState::new(deck("spe1.DATA"), spe1_history(), RunOptions::default());
        let mut description = describe_deck(&state.deck).unwrap();
        description.active_cells = cells;
        state.description = Some(description);
        state.initial_metric = Some(1.0);
        state.phase = Phase::Reviewed;
        planner_agent(&mut state, &mut Context::new(&backend)).unwrap();
        let plan = state.plan.unwrap();
        assert_eq!(plan.budget_tier, tier, "{cells} cells");
        assert_eq!(
            (plan.n_initial, plan.n_total, plan.max_parameters),
            (32, n_total, max_parameters)
        );
        assert_eq!(plan.target_improvement_pct, 50.0);
        assert!(!plan.parameter_families.contains(&Family::FaultMultipliers));
    }
}

#[test]
fn baseline_runs_before_the_planner() {
    let state = state_at(Phase::Planned, 0, 10);
    let baseline = state
        .messages
        .iter()
        .position(|m| m.text.starts_with("Baseline wNRMSE"))
        .unwrap();
    let plan = state
        .messages
        .iter()
        .position(|m| m.author == Agent::Planner && m.role == Role::ToolCall)
        .unwrap();
    assert!(baseline < plan);
    assert!(state.baseline.unwrap().total > 0.0);
}

#[test]
fn parameterizer_varies_spe1_permeability_and_relperm() {
    let state = state_at(Phase::CheckpointParams, 0, 10);
    let names: Vec<&str> = state.specs().iter().map(|s| s.name.as_str()).collect();
    assert_eq!(
        names,
        [
            "PERM_L1",
            "PERM_L2",
            "PERM_L3",
            "SWOF_SWC",
            "SWOF_KRW_MAX",
            "SWOF_KROW_MAX",
            "SGOF_KRG_MAX",
            "SGOF_KROG_MAX"
        ]
    );
    let l2 = state.space.as_ref().unwrap().spec("PERM_L2").unwrap();
    assert_eq!(
        (l2.lower, l2.initial, l2.upper, l2.scale),
        (5.0, 50.0, 500.0, Scale::Log10)
    );
    for s in state.specs() {
        assert!(s.lower <= s.initial && s.initial <= s.upper, "{s:?}");
    }
    assert!(state
        .messages
        .iter()
        .any(|m| m.role == Role::ToolCall && m.text.contains("lookup_keyword")));
}

#[test]
fn parameterizer_respects_max_parameters() {
    let backend = Backend::default();
    let mut opts = options(0, 10);
    opts.planner.generous.max_parameters = 1;
    let mut state = PipelineState::new(deck("spe1.DATA"), spe1_history(), opts);
    advance(&mut state, &mut Context::new(&backend), None).unwrap();
    assert_eq!(state.phase, Phase::CheckpointParams);
    assert_eq!(state.specs().len(), 1);
}

#[test]
fn parameterizer_fails_when_nothing_is_tunable() {
    let backend = Backend::default();
    let text = "RUNSPEC\nOIL\nDIMENS\n 1 1 1 /\nGRID\nTOPS\n 1000 /\nSCHEDULE\nWELSPECS\n 'P' 'G' 1 1 1* 'OIL' /\n/\n";
    let obs = spe1_history();
    let mut state = PipelineState::new(Deck::parse(text, &|_| None).unwrap(), obs, RunOptions::default());
    advance(&mut state, &mut Context::new(&backend), None).unwrap();
    assert_eq!(state.phase, Phase::Failed);
    assert!(state.failure.unwrap().contains("no parameters found"));
}

#[test]
fn repair_shrinks_a_bound_that_breaks_monotonicity() {
    let manifest =
        ParameterSpace::parse_manifest(&std::fs::read_to_string(fixture("manifests/relperm_bad.json")).unwrap())
            .unwrap();
    let space = ParameterSpace::from_manifest(deck("spe1.DATA"), &manifest).unwrap();
    let report = dry_run_validate(&space, &[&RelpermValidator]);
    assert!(!report.ok);
    let (_, finding) = report.findings().next().unwrap();
    assert_eq!(finding.kind, FindingKind::RelpermMonotonicity);
    assert!(finding.message.contains("non-monotonic relative permeability curve"));

    let outcome = repair_space(&space, &report);
    assert!(outcome.unresolved.is_empty());
    let spec = outcome.space.spec("SWOF_KRW_4").unwrap();
    assert_eq!((spec.lower, spec.upper), (0.25, 0.54));
    assert!(dry_run_validate(&outcome.space, &[&RelpermValidator]).ok);
    assert_eq!(outcome.calls.len(), 1);
}

#[test]
fn checkpoint_edit_then_approve() {
    let mut state = state_at(Phase::CheckpointParams, 0, 10);
    let view = checkpoint_view(&state).unwrap();
    assert_eq!(view.kind, CheckpointKind::Parameters);
    assert_eq!(view.version, 0);
    let edit = ToolCall::SetBounds {
        name: "PERM_L1".into(),
        lower: 300.0,
        upper: 600.0,
        initial: None,
    };
    checkpoint_apply(&mut state, &[edit], true).unwrap();
    assert_eq!(state.phase, Phase::OptimizerReady);
    assert_eq!(state.checkpoint_version, 1);
    let s = state.space.as_ref().unwrap().spec("PERM_L1").unwrap();
    assert_eq!((s.lower, s.upper), (300.0, 600.0));
    let last = state.messages.iter().rev().find(|m| m.role == Role::ToolCall).unwrap();
    assert_eq!(last.author, Agent::User);
}

#[test]
fn invalid_checkpoint_edit_leaves_state_unchanged() {
    let mut state = state_at(Phase::CheckpointParams, 0, 10);
    let before = state.clone();
    let edits = [
        ToolCall::SetBounds {
            name: "PERM_L2".into(),
            lower: 10.0,
            upper: 100.0,
            initial: None,
        },
        ToolCall::SetBounds {
            name: "PERM_L1".into(),
            lower: 600.0,
            upper: 300.0,
            initial: None,
        },
    ];
    assert!(matches!(
        checkpoint_apply(&mut state, &edits, true),
        Err(PipelineError::InvalidEdit(_))
    ));
    assert_eq!(state, before);

    let relperm_too_wide = ToolCall::SetBounds {
        name: "SWOF_KRW_MAX".into(),
        lower: 0.0,
        upper: 1.0,
        initial: None,
    };
    // krw at Sw = 1 may reach 1 but not drop below its neighbour
    let result = checkpoint_apply(&mut state, &[relperm_too_wide], false);
    assert!(
        matches!(result, Err(PipelineError::InvalidEdit(ref m)) if m.contains("non-monotonic")),
        "{result:?}"
    );
    assert_eq!(state, before);

    let optimizer_only = ToolCall::UpdateOptimizer {
        n_initial: None,
        n_total: Some(5),
        acquisition: None,
        seed: None,
    };
    assert!(checkpoint_apply(&mut state, &[optimizer_only], false).is_err());
    assert_eq!(state, before);
}

#[test]
fn empty_approval_changes_only_the_phase() {
    let mut state = state_at(Phase::CheckpointParams, 0, 10);
    let mut expected = state.clone();
    checkpoint_apply(&mut state, &[], true).unwrap();
    expected.phase = Phase::OptimizerReady;
    expected.history.push(Phase::OptimizerReady);
    assert_eq!(state, expected);
}

#[test]
fn approving_without_parameters_fails_the_run() {
    let mut state = state_at(Phase::CheckpointParams, 0, 10);
    let removals: Vec<ToolCall> = state
        .specs()
        .iter()
        .map(|s| ToolCall::RemoveParameter { name: s.name.clone() })
        .collect();
    checkpoint_apply(&mut state, &removals, true).unwrap();
    assert_eq!(state.phase, Phase::Failed);
    assert!(state.failure.unwrap().contains("no parameters found"));
}

#[test]
fn checkpoint_outside_a_checkpoint_is_illegal() {
    let mut state = spe1_state(0, 10);
    assert!(matches!(
        checkpoint_apply(&mut state, &[], true),
        Err(PipelineError::IllegalPhase { .. })
    ));
}

#[test]
fn optimizer_agent_picks_acquisition_by_dimension() {
    let backend = Backend::default();
    let mut state = state_at(Phase::OptimizerReady, 3, 40);
    let mut wide = state.clone();
    optimizer_agent(&mut state, &mut Context::new(&backend)).unwrap();
    let c = state.optimizer_config.as_ref().unwrap();
    assert_eq!(c.dimension, 8);
    assert_eq!(c.acquisition, Acquisition::GpHedge);
    assert_eq!((c.n_initial, c.n_total, c.seed), (32, 40, 3));
    assert_eq!(state.phase, Phase::CheckpointOptimizer);

    let text = format!(
        "RUNSPEC\nOIL\nDIMENS\n 79 1 1 /\nGRID\nPORO\n {} /\n",
        vec!["0.2"; 79].join(" ")
    );
    let mut space = ParameterSpace::new(Deck::parse(&text, &|_| None).unwrap());
    for i in 0..79 {
        let mut s = perm_spec(i, 0.2);
        s.name = format!("PORO_C{i}");
        s.target.keyword = "PORO".into();
        space = space.add_parameter(s).unwrap();
    }
    assert_eq!(space.dimension(), 79);
    wide.space = Some(space);
    wide.options.budget = None;
    optimizer_agent(&mut wide, &mut Context::new(&backend)).unwrap();
    let c = wide.optimizer_config.as_ref().unwrap();
    assert_eq!(c.acquisition, Acquisition::Ei);
    assert_eq!((c.dimension, c.n_total), (79, 80));
}

#[test]
fn optimizer_uses_the_planned_budget_without_override() {
    let backend = Backend::default();
    let mut state = state_at(Phase::OptimizerReady, 0, 10);
    state.options.budget = None;
    state.plan.as_mut().unwrap().n_total = 64;
    optimizer_agent(&mut state, &mut Context::new(&backend)).unwrap();
    assert_eq!(state.optimizer_config.unwrap().n_total, 64);
}

#[test]
fn matching_spends_the_budget_and_never_worsens_the_initial_metric() {
    let backend = Backend::default();
    let mut state = state_at(Phase::Matching, 1, 40);
    let mut seen = 0;
    let mut count = |_: &PipelineState| seen += 1;
    let mut ctx = Context::new(&backend);
    ctx.on_evaluation = Some(&mut count);
    matching_loop(&mut state, &mut ctx).unwrap();
    assert_eq!(seen, 40);
    assert_eq!(state.evaluations.len(), 40);
    assert_eq!(state.phase, Phase::Summarizing);
    let first = &state.evaluations[0];
    assert_eq!(first.source, "enqueued");
    assert_eq!(first.assignment, state.space.as_ref().unwrap().initial());
    let initial = state.initial_metric.unwrap();
    assert_eq!(initial, first.report.total);
    let best = state.best.as_ref().unwrap();
    assert!(best.metric <= initial);
    let min = state
        .evaluations
        .iter()
        .map(|e| e.report.total)
        .fold(f64::INFINITY, f64::min);
    assert_eq!(best.metric, min);
    let rows = metric_rows(&state);
    assert!(rows.windows(2).all(|w| w[1].best_so_far <= w[0].best_so_far));
    assert_eq!(rows.last().unwrap().best_so_far, best.metric);
}

#[test]
fn cancel_stops_between_evaluations() {
    let backend = Backend::default();
    let mut state = state_at(Phase::Matching, 1, 40);
    let cancel = AtomicBool::new(false);
    let mut hook = |s: &PipelineState| {
        if s.evaluations.len() == 5 {
            cancel.store(true, std::sync::atomic::Ordering::SeqCst);
        }
    };
    let mut ctx = Context::new(&backend);
    ctx.cancel = Some(&cancel);
    ctx.on_evaluation = Some(&mut hook);
    matching_loop(&mut state, &mut ctx).unwrap();
    assert_eq!(state.evaluations.len(), 5);
    assert!(state.messages.last().unwrap().text.contains("stopped on request"));

    summarizer_agent(&mut state, &mut Context::new(&backend)).unwrap();
    let summary = state.summary.as_ref().unwrap();
    assert_eq!(summary.evaluations, 5);
    assert!(summary
        .recommendations
        .iter()
        .any(|r| r.contains("stopped after 5 of 40")));
}

#[test]
fn all_failed_runs_report_the_penalty() {
    let root = tempfile::tempdir().unwrap();
    let backend = failing_backend(root.path());
    let obs = spe1_history();
    let penalty = obs.failure_penalty();
    let state = run_pipeline(
        deck("spe1.DATA"),
        obs,
        &backend,
        Interaction::AutoApprove,
        options(0, 6),
    );
    assert_eq!(state.phase, Phase::Done, "{:?}", state.failure);
    assert_eq!(state.evaluations.len(), 6);
    assert_eq!(state.best.as_ref().unwrap().metric, penalty);
    let summary = state.summary.as_ref().unwrap();
    assert!(summary.all_failed);
    assert_eq!(summary.improvement_pct, 0.0);
    assert!(summary.recommendations[0].contains("Every simulation failed"));
    assert!(summary.series.iter().all(|b| b.before.is_empty() && b.after.is_empty()));
}

#[test]
fn improvement_arithmetic_rounds_half_up() {
    for (initial, best, pct) in [(0.7823, 0.0366, 95.0), (0.9510, 0.2901, 69.0), (2.3121, 2.0128, 13.0)] {
        assert_eq!(round_half_up(improvement_pct(initial, best)), pct);
    }
    assert_eq!(round_half_up(12.5), 13.0);
    assert_eq!(round_half_up(12.4999), 12.0);
    assert_eq!(improvement_pct(0.0, 0.0), 0.0);
}

fn with_metrics(mut state: PipelineState, metrics: &[f64]) -> PipelineState {
    let template = state.evaluations[0].clone();
    state.evaluations = metrics
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let mut e: EvaluationRecord = template.clone();
            e.iter = i + 1;
            e.report.total = *m;
            e
        })
        .collect();
    let (iter, metric) = metrics
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, m)| if *m < acc.1 { (i, *m) } else { acc });
    let best = state.best.as_mut().unwrap();
    best.iter = iter + 1;
    best.metric = metric;
    state.initial_metric = Some(metrics[0]);
    state
}

#[test]
fn summarizer_reports_improvement_and_explains_shortfalls() {
    let backend = Backend::default();
    let mut base = state_at(Phase::Matching, 0, 4);
    matching_loop(&mut base, &mut Context::new(&backend)).unwrap();

    let mut good = with_metrics(base.clone(), &[0.7823, 0.5, 0.0366, 0.1]);
    summarizer_agent(&mut good, &mut Context::new(&backend)).unwrap();
    let s = good.summary.as_ref().unwrap();
    assert_eq!((s.initial_metric, s.best_metric), (0.7823, 0.0366));
    assert_eq!(s.improvement_rounded, 95.0);
    assert!((s.improvement_pct - 100.0 * (0.7823 - 0.0366) / 0.7823).abs() < 1e-12);
    assert!(s.recommendations.is_empty());
    assert_eq!(good.phase, Phase::Done);

    let mut poor = with_metrics(base, &[2.3121, 2.2, 2.0128, 2.1]);
    summarizer_agent(&mut poor, &mut Context::new(&backend)).unwrap();
    let s = poor.summary.as_ref().unwrap();
    assert_eq!(s.improvement_rounded, 13.0);
    assert!(s
        .recommendations
        .iter()
        .any(|r| r.contains("budget was reduced from the planned 80 to 4")));
    let json = report_json(&poor);
    assert_eq!(json["status"], "done");
    assert_eq!(json["improvement_rounded"], 13.0);
}

#[test]
fn full_run_walks_every_phase_and_reports() {
    let backend = Backend::default();
    let state = run_pipeline(
        deck("spe1.DATA"),
        spe1_history(),
        &backend,
        Interaction::AutoApprove,
        options(5, 12),
    );
    assert_eq!(state.phase, Phase::Done, "{:?}", state.failure);
    let expected: Vec<Phase> = Phase::ORDER.to_vec();
    assert_eq!(state.history, expected);

    // the transcript alone rebuilds the parameter space
    assert_eq!(
        &replay_space(&state.deck, &state.messages),
        state.space.as_ref().unwrap()
    );

    let summary = state.summary.as_ref().unwrap();
    assert_eq!(summary.series.len(), state.observations.series().len());
    assert_eq!(summary.parameters.len(), 8);

    let dir = tempfile::tempdir().unwrap();
    write_report_bundle(&state, dir.path()).unwrap();
    for f in ["report.md", "summary.json", "evaluations.csv", "metric_evolution.csv"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let series_files = std::fs::read_dir(dir.path().join("series")).unwrap().count();
    assert_eq!(series_files, summary.series.len());
    let csv = evaluation_log_csv(&state);
    assert_eq!(csv.lines().count(), 13);
    assert!(csv.starts_with("iter,source,PERM_L1,PERM_L2,PERM_L3,"));

    let restored = PipelineState::from_json(&state.to_json()).unwrap();
    assert_eq!(restored, state);
}

#[test]
fn same_seed_gives_identical_logs() {
    let backend = Backend::default();
    let run = |seed| {
        let s = run_pipeline(
            deck("spe1.DATA"),
            spe1_history(),
            &backend,
            Interaction::AutoApprove,
            options(seed, 36),
        );
        evaluation_log_csv(&s)
    };
    let a = run(9);
    assert_eq!(a, run(9));
    assert_ne!(a, run(10));
}

#[test]
fn scripted_client_reproduces_the_rule_based_run() {
    let backend = Backend::default();
    let rules = run_pipeline(
        deck("spe1.DATA"),
        spe1_history(),
        &backend,
        Interaction::AutoApprove,
        options(2, 8),
    );
    let mut client = ScriptedClient::from_transcript(&rules.messages);
    let mut state = spe1_state(2, 8);
    let mut ctx = Context::new(&backend);
    ctx.client = Some(&mut client);
    drive(&mut state, &mut ctx, &mut Interaction::AutoApprove);
    assert_eq!(state.phase, Phase::Done, "{:?}", state.failure);
    assert_eq!(state.messages, rules.messages);
    assert_eq!(evaluation_log_csv(&state), evaluation_log_csv(&rules));
    assert!(client.responses.is_empty());
    for r in &client.requests {
        assert_eq!(r.temperature, 0.0);
    }
}

#[test]
fn model_tool_errors_are_relayed_back() {
    use petromatch_core::pipeline::ChatResponse;
    let backend = Backend::default();
    let mut state = spe1_state(0, 4);
    let description = describe_deck(&state.deck).unwrap();
    let mut client = ScriptedClient::new([
        ChatResponse::Tool {
            name: "set_plan".into(),
            arguments: serde_json::json!({}),
        },
        ChatResponse::call(&ToolCall::SetDescription { description }),
        ChatResponse::Text { text: "done".into() },
    ]);
    let mut ctx = Context::new(&backend);
    ctx.client = Some(&mut client);
    advance(&mut state, &mut ctx, Some(Phase::Reviewed)).unwrap();
    assert_eq!(state.phase, Phase::Reviewed);
    let first_result = state.messages.iter().find(|m| m.role == Role::ToolResult).unwrap();
    assert!(first_result.text.starts_with("error:"), "{}", first_result.text);
    assert_eq!(client.requests.len(), 3);
}

#[test]
fn rejecting_every_parameter_ends_in_failure() {
    let backend = Backend::default();
    let mut handler = |s: &PipelineState| CheckpointDecision {
        edits: s
            .specs()
            .iter()
            .map(|p| ToolCall::RemoveParameter { name: p.name.clone() })
            .collect(),
        approve: true,
    };
    let state = run_pipeline(
        deck("spe1.DATA"),
        spe1_history(),
        &backend,
        Interaction::Handler(&mut handler),
        options(0, 8),
    );
    assert_eq!(state.phase, Phase::Failed);
    assert!(state.failure.as_ref().unwrap().contains("no parameters found"));
    assert_eq!(report_json(&state)["status"], "failed");
    assert!(state.evaluations.is_empty());
}

#[test]
fn advance_refuses_terminal_and_past_targets() {
    let backend = Backend::default();
    let mut state = state_at(Phase::Planned, 0, 4);
    let mut ctx = Context::new(&backend);
    assert!(matches!(
        advance(&mut state, &mut ctx, Some(Phase::Reviewed)),
        Err(PipelineError::IllegalPhase { .. })
    ));
    state.phase = Phase::Done;
    assert!(advance(&mut state, &mut ctx, None).is_err());
}

#[test]
fn resume_replays_the_recorded_prefix() {
    let backend = Backend::default();
    let mut full = state_at(Phase::Matching, 4, 40);
    let mut partial = full.clone();
    matching_loop(&mut full, &mut Context::new(&backend)).unwrap();

    let cancel = AtomicBool::new(false);
    let mut hook = |s: &PipelineState| {
        if s.evaluations.len() == 35 {
            cancel.store(true, std::sync::atomic::Ordering::SeqCst);
        }
    };
    let mut ctx = Context::new(&backend);
    ctx.cancel = Some(&cancel);
    ctx.on_evaluation = Some(&mut hook);
    matching_loop(&mut partial, &mut ctx).unwrap();
    assert_eq!(partial.evaluations.len(), 35);

    // a crash leaves the state saved after the last evaluation, still matching
    let mut resumed = PipelineState::from_json(&partial.to_json()).unwrap();
    resumed.phase = Phase::Matching;
    resumed.history.pop();
    resumed.messages.pop();
    matching_loop(&mut resumed, &mut Context::new(&backend)).unwrap();
    assert_eq!(resumed.evaluations, full.evaluations);
    assert_eq!(evaluation_log_csv(&resumed), evaluation_log_csv(&full));

    let mut tampered = PipelineState::from_json(&partial.to_json()).unwrap();
    tampered.phase = Phase::Matching;
    tampered.evaluations[3].point[0] = 0.123_456;
    assert!(matches!(
        matching_loop(&mut tampered, &mut Context::new(&backend)),
        Err(PipelineError::Resume(_))
    ));
}

#[test]
fn state_schema_is_checked() {
    let state = spe1_state(0, 4);
    let text = state.to_json().replacen("\"schema\": 1", "\"schema\": 99", 1);
    assert!(matches!(PipelineState::from_json(&text), Err(PipelineError::State(_))));
}

#[test]
fn keyword_reference_lookup() {
    let docs = DocStore::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/keywords")).unwrap();
    let exact = docs.lookup("permx");
    assert_eq!(exact[0].keyword, "PERMX");
    assert!(exact[0].text.contains("permeability"));
    let prefixed: Vec<String> = docs.lookup("PERM").into_iter().map(|d| d.keyword).collect();
    assert_eq!(prefixed, ["PERMX", "PERMY", "PERMZ"]);
    assert!(docs.lookup("ZZZZ").is_empty());
    assert!(docs.lookup("  ").is_empty());
}

#[test]
fn lookup_results_reach_the_transcript() {
    let backend = Backend::default();
    let docs = DocStore::from_pairs([("SWOF", "Water-oil saturation functions.")]);
    let mut state = spe1_state(0, 4);
    let mut ctx = Context::new(&backend);
    ctx.docs = Some(&docs);
    advance(&mut state, &mut ctx, Some(Phase::Parameterized)).unwrap();
    assert!(state
        .messages
        .iter()
        .any(|m| m.role == Role::ToolResult && m.text.contains("Water-oil saturation functions.")));
}
