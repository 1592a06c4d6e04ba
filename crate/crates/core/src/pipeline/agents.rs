//! The agents. Each has a rule-based default expressed as tool calls.

use std::collections::{BTreeMap, BTreeSet};

use super::chat::{run_agent, Script};
use super::tools::{report_text, validate, ToolCall};
use super::{
    Agent, BudgetTier, Context, DoePlan, Family, ModelType, ParameterRow, Phase, PipelineError, PipelineState,
    PlannerConfig, QuantityRow, ReservoirDescription, RunOptions, SeriesBundle, SummaryReport,
};
use crate::deck::{Deck, Keyword, Record, Token, TokenPath};
use crate::misfit::{align, MisfitReport, QuantityClass};
use crate::optimizer::{Acquisition, OptimizerConfig};
use crate::paramspace::{
    Assignment, Corner, DefaultBounds, FindingKind, ParameterSpace, ParameterSpec, Scale, ValidationReport,
};
use crate::simulator::evaluate;

/// Repair rounds the parameterizer spends on a failing dry run.
pub const MAX_REPAIR_ROUNDS: usize = 5;

/// Acquisition switches from GP-Hedge to EI above this many parameters.
const HEDGE_MAX_DIMENSION: usize = 10;

/// Raw token groups in PERMX/PORO beyond which values are taken to be per
/// cell rather than per layer, and not parameterized one by one.
const MAX_VALUE_GROUPS: usize = 64;

/// A best value within this fraction of the unit interval from a bound is
/// reported as sitting on it.
const AT_BOUND: f64 = 0.01;

const MULTIPLIER_KEYWORDS: [&str; 10] = [
    "MULTFLT", "MULTX", "MULTY", "MULTZ", "MULTX-", "MULTY-", "MULTZ-", "MULTPV", "MULTIPLY", "MULTREGT",
];

fn fmt_metric(v: f64) -> String {
    format!("{v:.4}")
}

pub fn round_half_up(x: f64) -> f64 {
    (x + 0.5).floor()
}

/// Relative reduction of the metric in percent; 0 when `initial` is not
/// positive.
pub fn improvement_pct(initial: f64, best: f64) -> f64 {
    if initial > 0.0 {
        100.0 * (initial - best) / initial
    } else {
        0.0
    }
}

// ---------------------------------------------------------------- reviewer

pub fn describe_deck(deck: &Deck) -> Result<ReservoirDescription, PipelineError> {
    let dims_kw = deck
        .find_keyword("DIMENS")
        .ok_or_else(|| PipelineError::DeckUnreadable("DIMENS is missing".into()))?;
    let mut dims = [0usize; 3];
    for (i, d) in dims.iter_mut().enumerate() {
        let v = dims_kw.records().first().and_then(|r| r.float(i)).unwrap_or(0.0);
        if !(v >= 1.0 && v.fract() == 0.0) {
            return Err(PipelineError::DeckUnreadable(format!(
                "DIMENS item {} must be a positive integer",
                i + 1
            )));
        }
        *d = v as usize;
    }
    let cells = dims.iter().product::<usize>();
    let active_cells = deck
        .find_keyword("ACTNUM")
        .and_then(Keyword::numbers)
        .filter(|v| v.len() == cells)
        .map_or(cells, |v| v.iter().filter(|x| **x != 0.0).count());

    let mut warnings = Vec::new();
    let runspec: Vec<&str> = deck.list_keywords("RUNSPEC").unwrap_or_default();
    if !deck.has_section("RUNSPEC") {
        warnings.push("RUNSPEC is missing; phases unknown".to_string());
    }
    let phases: Vec<String> = [
        ("OIL", "oil"),
        ("WATER", "water"),
        ("GAS", "gas"),
        ("DISGAS", "dissolved gas"),
        ("VAPOIL", "vaporized oil"),
    ]
    .into_iter()
    .filter(|(kw, _)| runspec.contains(kw))
    .map(|(_, label)| label.to_string())
    .collect();
    let model_type = if runspec.contains(&"OIL") {
        ModelType::Blackoil
    } else {
        ModelType::Other
    };

    let record_names = |kw: &str| -> Vec<String> {
        deck.keywords_named(kw)
            .flat_map(|k| k.records())
            .filter(|r| !r.items.is_empty())
            .filter_map(|r| r.text(0).map(str::to_string))
            .collect()
    };
    let wells = record_names("WELSPECS");
    if deck.find_keyword("WELSPECS").is_none() {
        warnings.push("WELSPECS is missing; producer and injector counts are 0".to_string());
    }
    let injecting: BTreeSet<String> = record_names("WCONINJE").into_iter().collect();
    let unique: BTreeSet<&String> = wells.iter().collect();
    let n_injectors = unique.iter().filter(|w| injecting.contains(**w)).count();
    let n_producers = unique.len() - n_injectors;

    let has_faults = deck.find_keyword("FAULTS").is_some() || deck.find_keyword("MULTFLT").is_some();
    let has_multipliers = MULTIPLIER_KEYWORDS.iter().any(|k| deck.find_keyword(k).is_some());

    let kind = match model_type {
        ModelType::Blackoil => "Black-oil model",
        ModelType::Other => "Model",
    };
    let phase_text = if phases.is_empty() {
        String::new()
    } else {
        format!(" ({})", phases.join(", "))
    };
    let summary = format!(
        "{kind}{phase_text} on a {}x{}x{} grid with {active_cells} active cells; {n_producers} producer(s) and {n_injectors} injector(s); {}; {}.",
        dims[0],
        dims[1],
        dims[2],
        if has_faults { "faults present" } else { "no faults" },
        if has_multipliers { "multipliers present" } else { "no multipliers" },
    );
    Ok(ReservoirDescription {
        model_type,
        dims,
        active_cells,
        n_producers,
        n_injectors,
        phases,
        has_faults,
        has_multipliers,
        summary,
        warnings,
    })
}

pub fn reviewer_agent(state: &mut PipelineState, ctx: &mut Context) -> Result<(), PipelineError> {
    state.require(Phase::Created)?;
    let briefing = format!(
        "Describe this deck. Keywords by section: {}",
        keyword_overview(&state.deck)
    );
    run_agent(state, ctx, Agent::Reviewer, briefing, |state| {
        let description = describe_deck(&state.deck)?;
        let mut text = description.summary.clone();
        for w in &description.warnings {
            text.push_str(&format!("\nWarning: {w}"));
        }
        Ok(Script {
            calls: vec![ToolCall::SetDescription { description }],
            text,
        })
    })?;
    if state.description.is_none() {
        return Err(PipelineError::Incomplete {
            agent: "reviewer",
            missing: "a description",
        });
    }
    state.set_phase(Phase::Reviewed);
    Ok(())
}

fn keyword_overview(deck: &Deck) -> String {
    let mut sections: Vec<&str> = deck.list_sections();
    sections.dedup();
    sections
        .iter()
        .map(|s| format!("{s}: {}", deck.list_keywords(s).unwrap_or_default().join(" ")))
        .collect::<Vec<_>>()
        .join("; ")
}

// ----------------------------------------------------------------- planner

/// Evaluate the unparameterized deck; its per-series breakdown is what the
/// planner sees as the field metrics.
pub fn baseline_evaluation(state: &mut PipelineState, ctx: &mut Context) -> Result<(), PipelineError> {
    state.require(Phase::Reviewed)?;
    let space = ParameterSpace::new(state.deck.clone());
    let (report, _) = evaluate(&space, &Assignment::default(), ctx.backend, &state.observations);
    let text = format!(
        "Baseline wNRMSE {} ({})",
        fmt_metric(report.total),
        class_breakdown(&report)
    );
    state.initial_metric = Some(report.total);
    state.baseline = Some(report);
    state.say(Agent::Simulator, text);
    Ok(())
}

fn class_breakdown(report: &MisfitReport) -> String {
    if let Some(f) = &report.failure {
        return format!("simulation failed: {f}");
    }
    let mut by_class: BTreeMap<QuantityClass, f64> = BTreeMap::new();
    for e in &report.per_series {
        *by_class.entry(e.quantity.class()).or_default() += e.wnrmse;
    }
    by_class
        .iter()
        .map(|(c, v)| {
            let label = match c {
                QuantityClass::Pressure => "bottom-hole pressure",
                QuantityClass::ProductionRate => "production",
                QuantityClass::InjectionRate => "injection",
            };
            format!("{label} {}", fmt_metric(*v))
        })
        .collect::<Vec<_>>()
        .join(", ")
}

fn plan_for(
    description: &ReservoirDescription,
    deck: &Deck,
    baseline: Option<&MisfitReport>,
    cfg: &PlannerConfig,
    bounds: &DefaultBounds,
) -> DoePlan {
    let cells = description.active_cells;
    let (tier, budget, preferred) = if cells <= cfg.generous_max_cells {
        (
            BudgetTier::Generous,
            cfg.generous,
            vec![
                Family::LayerPermeability,
                Family::RelpermEndpoints,
                Family::PorosityGroups,
                Family::FaultMultipliers,
            ],
        )
    } else if cells <= cfg.moderate_max_cells {
        (
            BudgetTier::Moderate,
            cfg.moderate,
            vec![
                Family::LayerPermeability,
                Family::RelpermEndpoints,
                Family::PorosityGroups,
                Family::FaultMultipliers,
            ],
        )
    } else {
        (
            BudgetTier::Conservative,
            cfg.conservative,
            vec![Family::FaultMultipliers, Family::LayerPermeability],
        )
    };
    let families: Vec<Family> = preferred
        .into_iter()
        .filter(|f| !family_candidates(deck, *f, bounds).is_empty())
        .collect();
    let weight = match tier {
        BudgetTier::Generous => "light model: generous budget",
        BudgetTier::Moderate => "mid-size model: moderate budget",
        BudgetTier::Conservative => "heavy model: conservative budget restricted to the most sensitive families",
    };
    let family_text = if families.is_empty() {
        "no supported parameter family found in the deck".to_string()
    } else {
        families.iter().map(|f| f.label()).collect::<Vec<_>>().join(", ")
    };
    let baseline_text = baseline.map_or(String::new(), |b| {
        format!(" Baseline wNRMSE {} ({}).", fmt_metric(b.total), class_breakdown(b))
    });
    DoePlan {
        budget_tier: tier,
        max_parameters: budget.max_parameters,
        n_initial: budget.n_initial,
        n_total: budget.n_total,
        parameter_families: families,
        target_improvement_pct: cfg.target_improvement_pct,
        rationale: format!(
            "{cells} active cells, {weight}: {} simulations ({} Latin hypercube points), up to {} parameters. Vary {family_text}.{baseline_text}",
            budget.n_total, budget.n_initial, budget.max_parameters
        ),
    }
}

pub fn planner_agent(state: &mut PipelineState, ctx: &mut Context) -> Result<(), PipelineError> {
    state.require(Phase::Reviewed)?;
    if state.initial_metric.is_none() {
        return Err(PipelineError::Incomplete {
            agent: "planner",
            missing: "a baseline metric",
        });
    }
    let briefing = format!(
        "Reservoir: {}\nBaseline field metrics: {}\nPlan the design of experiments.",
        serde_json::to_string(&state.description).unwrap_or_default(),
        state.baseline.as_ref().map(class_breakdown).unwrap_or_default()
    );
    run_agent(state, ctx, Agent::Planner, briefing, |state| {
        let description = state.description.as_ref().ok_or(PipelineError::Incomplete {
            agent: "reviewer",
            missing: "a description",
        })?;
        let plan = plan_for(
            description,
            &state.deck,
            state.baseline.as_ref(),
            &state.options.planner,
            &state.options.bounds,
        );
        let text = plan.rationale.clone();
        Ok(Script {
            calls: vec![ToolCall::SetPlan { plan }],
            text,
        })
    })?;
    if state.plan.is_none() {
        return Err(PipelineError::Incomplete {
            agent: "planner",
            missing: "a plan",
        });
    }
    state.set_phase(Phase::Planned);
    Ok(())
}

// ----------------------------------------------------------- parameterizer

/// Keywords with their occurrence index among same-named keywords in
/// same-named sections.
fn with_occurrence(deck: &Deck) -> Vec<(&Keyword, usize)> {
    let mut seen: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    deck.keywords()
        .map(|k| {
            let n = seen.entry((k.section(), k.name())).or_insert(0);
            *n += 1;
            (k, *n - 1)
        })
        .collect()
}

fn path(kw: &Keyword, occurrence: usize, record: usize, item: usize) -> TokenPath {
    TokenPath {
        section: kw.section().to_string(),
        keyword: kw.name().to_string(),
        occurrence,
        record,
        item,
    }
}

/// Raw item index holding expanded position `pos`, if that item is a
/// single scalar.
fn raw_index(record: &Record, pos: usize) -> Option<usize> {
    let mut at = 0;
    for (i, item) in record.items.iter().enumerate() {
        let m = item.multiplicity();
        if pos < at + m {
            return (m == 1 && item.is_scalar()).then_some(i);
        }
        at += m;
    }
    None
}

/// Expanded position of raw item `item`.
fn expanded_index(record: &Record, item: usize) -> usize {
    record.items[..item.min(record.items.len())]
        .iter()
        .map(Token::multiplicity)
        .sum()
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() {
                c.to_ascii_uppercase()
            } else {
                '_'
            }
        })
        .collect()
}

fn spec(
    name: String,
    initial: f64,
    (lower, upper): (f64, f64),
    scale: Scale,
    unit: &str,
    target: TokenPath,
) -> Option<ParameterSpec> {
    let s = ParameterSpec {
        name,
        lower,
        upper,
        initial,
        scale,
        unit: unit.to_string(),
        target,
    };
    s.check().ok().map(|()| s)
}

/// One spec per raw value group of the first `keyword` array.
fn group_specs(
    deck: &Deck,
    keyword: &str,
    prefix: &str,
    unit: &str,
    scale: Scale,
    bounds: impl Fn(f64) -> (f64, f64),
    require_distinct: bool,
) -> Vec<ParameterSpec> {
    let Some((kw, occ)) = with_occurrence(deck).into_iter().find(|(k, _)| k.name() == keyword) else {
        return Vec::new();
    };
    let Some(record) = kw.records().first() else {
        return Vec::new();
    };
    if record.items.len() > MAX_VALUE_GROUPS {
        return Vec::new();
    }
    let values: Vec<Option<f64>> = record.items.iter().map(Token::as_f64).collect();
    if require_distinct {
        let distinct: BTreeSet<u64> = values.iter().flatten().map(|v| v.to_bits()).collect();
        if distinct.len() < 2 {
            return Vec::new();
        }
    }
    values
        .iter()
        .enumerate()
        .filter_map(|(i, v)| {
            let v = (*v).filter(|v| *v > 0.0)?;
            spec(
                format!("{prefix}{}", i + 1),
                v,
                bounds(v),
                scale,
                unit,
                path(kw, occ, 0, i),
            )
        })
        .collect()
}

fn relperm_specs(deck: &Deck) -> Vec<ParameterSpec> {
    // (keyword, name, row from the start or end, column, column kind)
    #[derive(Clone, Copy)]
    enum Col {
        Saturation,
        Rising,
        Falling,
    }
    let picks: [(&str, &str, bool, usize, Col); 5] = [
        ("SWOF", "SWOF_SWC", false, 0, Col::Saturation),
        ("SWOF", "SWOF_KRW_MAX", true, 1, Col::Rising),
        ("SWOF", "SWOF_KROW_MAX", false, 2, Col::Falling),
        ("SGOF", "SGOF_KRG_MAX", true, 1, Col::Rising),
        ("SGOF", "SGOF_KROG_MAX", false, 2, Col::Falling),
    ];
    let keywords = with_occurrence(deck);
    let mut out = Vec::new();
    for (keyword, name, from_end, col, kind) in picks {
        let Some((kw, occ)) = keywords.iter().find(|(k, _)| k.name() == keyword) else {
            continue;
        };
        let Some(record) = kw.records().first() else { continue };
        let Some(values) = record.numbers() else { continue };
        if values.len() < 8 || values.len() % 4 != 0 {
            continue;
        }
        let rows = values.len() / 4;
        let row = if from_end { rows - 1 } else { 0 };
        let at = |r: usize| values[r * 4 + col];
        let v = at(row);
        let prev = row.checked_sub(1).map(at);
        let next = (row + 1 < rows).then(|| at(row + 1));
        let (lower, upper) = match kind {
            Col::Rising => (prev.unwrap_or(0.0), next.unwrap_or(1.0)),
            Col::Falling => (next.unwrap_or(0.0), prev.unwrap_or(1.0)),
            // Saturations must stay strictly increasing: stop halfway.
            Col::Saturation => (prev.map_or(0.0, |p| 0.5 * (p + v)), next.map_or(1.0, |n| 0.5 * (v + n))),
        };
        let (lower, upper) = (lower.max(0.0), upper.min(1.0));
        let Some(item) = raw_index(record, row * 4 + col) else {
            continue;
        };
        if let Some(s) = spec(
            name.to_string(),
            v,
            (lower, upper),
            Scale::Linear,
            "",
            path(kw, *occ, 0, item),
        ) {
            out.push(s);
        }
    }
    out
}

fn porosity_specs(deck: &Deck, bounds: &DefaultBounds) -> Vec<ParameterSpec> {
    let (lo, hi) = bounds.poro_multiplier;
    let mut out = Vec::new();
    let mut n = 0;
    for (kw, occ) in with_occurrence(deck) {
        if kw.name() != "MULTIPLY" {
            continue;
        }
        for (r, record) in kw.records().iter().enumerate() {
            let is_poro = record.text(0).is_some_and(|t| t.eq_ignore_ascii_case("PORO"));
            let (Some(v), Some(item)) = (record.float(1), raw_index(record, 1)) else {
                continue;
            };
            if !is_poro || v <= 0.0 {
                continue;
            }
            n += 1;
            out.extend(spec(
                format!("PORO_MULT{n}"),
                v,
                (v * lo, v * hi),
                Scale::Linear,
                "",
                path(kw, occ, r, item),
            ));
        }
    }
    out.extend(group_specs(
        deck,
        "PORO",
        "PORO_L",
        "",
        Scale::Linear,
        |v| (v * lo, (v * hi).min(1.0)),
        true,
    ));
    out
}

fn fault_specs(deck: &Deck, bounds: &DefaultBounds) -> Vec<ParameterSpec> {
    let (lo, hi) = bounds.fault_multiplier;
    let mut out: Vec<ParameterSpec> = Vec::new();
    for (kw, occ) in with_occurrence(deck) {
        if kw.name() != "MULTFLT" {
            continue;
        }
        for (r, record) in kw.records().iter().enumerate() {
            let (Some(name), Some(v), Some(item)) = (record.text(0), record.float(1), raw_index(record, 1)) else {
                continue;
            };
            if v <= 0.0 {
                continue;
            }
            let mut pname = format!("FLT_{}", sanitize(name));
            let mut k = 2;
            while out.iter().any(|s| s.name == pname) {
                pname = format!("FLT_{}_{k}", sanitize(name));
                k += 1;
            }
            out.extend(spec(
                pname,
                v,
                (lo.min(v), hi.max(v)),
                Scale::Log10,
                "",
                path(kw, occ, r, item),
            ));
        }
    }
    out
}

/// Parameters the rule-based parameterizer would create for `family`, with
/// the default bound heuristics.
pub fn family_candidates(deck: &Deck, family: Family, bounds: &DefaultBounds) -> Vec<ParameterSpec> {
    match family {
        Family::LayerPermeability => {
            let (lo, hi) = bounds.perm_multiplier;
            group_specs(deck, "PERMX", "PERM_L", "mD", Scale::Log10, |v| (v * lo, v * hi), false)
        }
        Family::RelpermEndpoints => relperm_specs(deck),
        Family::PorosityGroups => porosity_specs(deck, bounds),
        Family::FaultMultipliers => fault_specs(deck, bounds),
    }
}

fn family_keywords(family: Family) -> &'static [&'static str] {
    match family {
        Family::LayerPermeability => &["PERMX"],
        Family::RelpermEndpoints => &["SWOF", "SGOF"],
        Family::PorosityGroups => &["PORO", "MULTIPLY"],
        Family::FaultMultipliers => &["MULTFLT"],
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RepairOutcome {
    pub space: ParameterSpace,
    /// The `set_bounds` / `remove_parameter` calls that were applied.
    pub calls: Vec<ToolCall>,
    /// Findings no parameter could be blamed for.
    pub unresolved: Vec<String>,
}

/// Shrink (or, once nothing is left to shrink, remove) every parameter a
/// failed dry run can be traced to. A relperm violation at row r is blamed
/// on parameters in the same column at rows r and r - 1.
pub fn repair_space(space: &ParameterSpace, report: &ValidationReport) -> RepairOutcome {
    let mut blamed: BTreeSet<(String, bool)> = BTreeSet::new();
    let mut unresolved = Vec::new();
    for (corner, f) in report.findings() {
        let located = matches!(f.kind, FindingKind::RelpermMonotonicity | FindingKind::RelpermRange);
        let hits: Vec<&ParameterSpec> = match (located, f.table, f.row, f.column) {
            (true, Some(table), Some(row), Some(col)) => space
                .specs()
                .iter()
                .filter(|s| {
                    let t = &s.target;
                    if t.keyword != f.keyword || t.occurrence != f.occurrence || t.record != table {
                        return false;
                    }
                    let Some(record) = space
                        .template()
                        .get_keyword(&t.section, &t.keyword, t.occurrence)
                        .ok()
                        .and_then(|k| k.records().get(t.record))
                    else {
                        return false;
                    };
                    let pos = expanded_index(record, t.item);
                    let (r, c) = (pos / 4, pos % 4);
                    let same_row = r == row;
                    let prior_row = f.kind == FindingKind::RelpermMonotonicity && r + 1 == row;
                    c == col && (same_row || prior_row)
                })
                .collect(),
            _ => Vec::new(),
        };
        if hits.is_empty() {
            unresolved.push(format!("{corner:?} corner: {}", f.message));
        }
        for s in hits {
            blamed.insert((s.name.clone(), corner == Corner::Upper));
        }
    }
    let mut out = space.clone();
    let mut calls = Vec::new();
    for (name, upper_side) in blamed {
        let Some(s) = out.spec(&name).cloned() else { continue };
        let span = if upper_side {
            s.upper - s.initial
        } else {
            s.initial - s.lower
        };
        let call = if span <= 1e-12 * (1.0 + s.initial.abs()) {
            ToolCall::RemoveParameter { name }
        } else if upper_side {
            ToolCall::SetBounds {
                name,
                lower: s.lower,
                upper: s.initial + 0.5 * span,
                initial: None,
            }
        } else {
            ToolCall::SetBounds {
                name,
                lower: s.initial - 0.5 * span,
                upper: s.upper,
                initial: None,
            }
        };
        let next = match &call {
            ToolCall::RemoveParameter { name } => out.remove_parameter(name),
            ToolCall::SetBounds { name, lower, upper, .. } => out.set_bounds(name, *lower, *upper, None),
            _ => unreachable!(),
        };
        match next {
            Ok(next) => {
                out = next;
                calls.push(call);
            }
            Err(e) => unresolved.push(e.to_string()),
        }
    }
    RepairOutcome {
        space: out,
        calls,
        unresolved,
    }
}

fn parameterizer_script(state: &PipelineState) -> Result<Script, PipelineError> {
    let plan = state.plan.as_ref().ok_or(PipelineError::Incomplete {
        agent: "planner",
        missing: "a plan",
    })?;
    let bounds = &state.options.bounds;
    let mut calls = Vec::new();
    let mut space = ParameterSpace::new(state.deck.clone());
    for family in &plan.parameter_families {
        if space.dimension() >= plan.max_parameters {
            break;
        }
        let candidates = family_candidates(&state.deck, *family, bounds);
        if candidates.is_empty() {
            continue;
        }
        for kw in family_keywords(*family) {
            if state.deck.find_keyword(kw).is_some() {
                calls.push(ToolCall::LookupKeyword {
                    keyword: kw.to_string(),
                });
            }
        }
        for spec in candidates {
            if space.dimension() >= plan.max_parameters {
                break;
            }
            if let Ok(next) = space.add_parameter(spec.clone()) {
                space = next;
                calls.push(ToolCall::AddParameter { spec });
            }
        }
    }
    if space.dimension() == 0 {
        let searched: Vec<&str> = plan.parameter_families.iter().map(|f| f.label()).collect();
        return Err(PipelineError::NoParametersFound(if searched.is_empty() {
            "the plan names no parameter family present in the deck".into()
        } else {
            format!("searched {}", searched.join(", "))
        }));
    }
    let mut repaired = 0;
    let mut report = validate(&space);
    calls.push(ToolCall::DryRun {});
    while !report.ok {
        if repaired == MAX_REPAIR_ROUNDS {
            return Err(PipelineError::ValidationFailed(format!(
                "still failing after {MAX_REPAIR_ROUNDS} repair rounds; {}",
                report_text(&report)
            )));
        }
        let outcome = repair_space(&space, &report);
        if !outcome.unresolved.is_empty() {
            return Err(PipelineError::ValidationFailed(outcome.unresolved.join("; ")));
        }
        space = outcome.space;
        calls.extend(outcome.calls);
        if space.dimension() == 0 {
            return Err(PipelineError::NoParametersFound(
                "repair removed every parameter".into(),
            ));
        }
        repaired += 1;
        report = validate(&space);
        calls.push(ToolCall::DryRun {});
    }
    let listing: Vec<String> = space
        .specs()
        .iter()
        .map(|s| {
            let scale = if s.scale == Scale::Log10 { " log10" } else { "" };
            format!("{} [{}, {}]{scale}", s.name, s.lower, s.upper)
        })
        .collect();
    let mut text = format!(
        "{} parameter(s): {}. Dry run passed",
        space.dimension(),
        listing.join(", ")
    );
    if repaired > 0 {
        text.push_str(&format!(" after {repaired} repair round(s)"));
    }
    text.push('.');
    Ok(Script { calls, text })
}

pub fn parameterizer_agent(state: &mut PipelineState, ctx: &mut Context) -> Result<(), PipelineError> {
    state.require(Phase::Planned)?;
    let briefing = format!(
        "Plan: {}\nReservoir: {}\nDefault ranges: permeability x{:?} (log10), porosity x{:?}, relperm within table neighbours, fault multipliers {:?} (log10).",
        serde_json::to_string(&state.plan).unwrap_or_default(),
        serde_json::to_string(&state.description).unwrap_or_default(),
        state.options.bounds.perm_multiplier,
        state.options.bounds.poro_multiplier,
        state.options.bounds.fault_multiplier,
    );
    run_agent(state, ctx, Agent::Parameterizer, briefing, parameterizer_script)?;
    let space = state
        .space
        .as_ref()
        .filter(|s| s.dimension() > 0)
        .ok_or_else(|| PipelineError::NoParametersFound("the parameterizer defined none".into()))?;
    let report = validate(space);
    if !report.ok {
        return Err(PipelineError::ValidationFailed(report_text(&report)));
    }
    state.set_phase(Phase::Parameterized);
    state.set_phase(Phase::CheckpointParams);
    Ok(())
}

// --------------------------------------------------------------- optimizer

fn optimizer_config_for(dimension: usize, plan: &DoePlan, options: &RunOptions) -> OptimizerConfig {
    let (mut n_initial, mut n_total) = (plan.n_initial, plan.n_total);
    if let Some(budget) = options.budget {
        n_total = budget.max(1);
        n_initial = n_initial.min(n_total);
    }
    let acquisition = if dimension <= HEDGE_MAX_DIMENSION {
        Acquisition::GpHedge
    } else {
        Acquisition::Ei
    };
    let mut config = OptimizerConfig::new(dimension, n_initial, n_total, acquisition, options.seed);
    config.exec = options.exec;
    config
}

pub fn optimizer_agent(state: &mut PipelineState, ctx: &mut Context) -> Result<(), PipelineError> {
    state.require(Phase::OptimizerReady)?;
    let dimension = state.space.as_ref().map_or(0, ParameterSpace::dimension);
    let briefing = format!(
        "Dimension {dimension}. Plan: {}. Seed {}.",
        serde_json::to_string(&state.plan).unwrap_or_default(),
        state.options.seed
    );
    run_agent(state, ctx, Agent::Optimizer, briefing, |state| {
        let plan = state.plan.as_ref().ok_or(PipelineError::Incomplete {
            agent: "planner",
            missing: "a plan",
        })?;
        let config = optimizer_config_for(dimension, plan, &state.options);
        let text = format!(
            "Gaussian-process optimizer with {} Latin hypercube points, {} acquisition, {} evaluations in total.",
            config.n_initial,
            config.acquisition.label(),
            config.n_total
        );
        Ok(Script {
            calls: vec![ToolCall::SetOptimizerConfig { config }],
            text,
        })
    })?;
    let config = state.optimizer_config.as_ref().ok_or(PipelineError::Incomplete {
        agent: "optimizer",
        missing: "a configuration",
    })?;
    config.validate()?;
    if config.dimension != dimension {
        return Err(PipelineError::ValidationFailed(format!(
            "optimizer dimension {} does not match {dimension} parameters",
            config.dimension
        )));
    }
    state.set_phase(Phase::CheckpointOptimizer);
    Ok(())
}

// -------------------------------------------------------------- summarizer

fn bundles(state: &PipelineState, backend: &crate::simulator::Backend, best: &Assignment) -> Vec<SeriesBundle> {
    let Some(space) = &state.space else { return Vec::new() };
    let initial = space.initial();
    let run = |a: &Assignment| evaluate(space, a, backend, &state.observations).1;
    let before = run(&initial);
    let after = if *best == initial { before.clone() } else { run(best) };
    let on_grid = |sims: &[crate::misfit::Series], hist: &crate::misfit::Series| {
        sims.iter()
            .find(|s| s.key() == hist.key())
            .and_then(|s| align(hist, s).ok())
            .map(|s| s.values)
            .unwrap_or_default()
    };
    state
        .observations
        .series()
        .iter()
        .map(|h| SeriesBundle {
            well: h.well.clone(),
            quantity: h.quantity,
            unit: h.unit.clone(),
            times: h.times.clone(),
            history: h.values.clone(),
            before: on_grid(&before, h),
            after: on_grid(&after, h),
        })
        .collect()
}

fn compute_summary(state: &PipelineState, backend: &crate::simulator::Backend) -> SummaryReport {
    let first = state.evaluations.first();
    let best_rec = state
        .best
        .as_ref()
        .and_then(|b| state.evaluations.iter().find(|e| e.iter == b.iter));
    let baseline = state.baseline.clone().unwrap_or_default();
    let before = first.map_or(&baseline, |e| &e.report);
    let after = best_rec.map_or(before, |e| &e.report);
    let initial_metric = before.total;
    let best_metric = after.total;
    let improvement_pct = improvement_pct(initial_metric, best_metric);
    let quantities = before
        .per_series
        .iter()
        .map(|b| {
            let a = after.entry(&b.well, b.quantity);
            QuantityRow {
                well: b.well.clone(),
                quantity: b.quantity,
                weight: b.weight,
                before_nrmse: b.nrmse,
                after_nrmse: a.and_then(|a| a.nrmse),
                before_wnrmse: b.wnrmse,
                after_wnrmse: a.map(|a| a.wnrmse),
            }
        })
        .collect();
    let best_assignment = best_rec.map(|e| e.assignment.clone());
    let parameters = state
        .specs()
        .iter()
        .map(|s| ParameterRow {
            name: s.name.clone(),
            lower: s.lower,
            upper: s.upper,
            initial: s.initial,
            best: best_assignment
                .as_ref()
                .and_then(|a| a.get(&s.name))
                .unwrap_or(s.initial),
        })
        .collect();
    let series = bundles(
        state,
        backend,
        &best_assignment.unwrap_or_else(|| state.space.as_ref().map(ParameterSpace::initial).unwrap_or_default()),
    );
    SummaryReport {
        initial_metric,
        best_metric,
        improvement_pct,
        improvement_rounded: round_half_up(improvement_pct),
        evaluations: state.evaluations.len(),
        all_failed: !state.evaluations.is_empty() && state.evaluations.iter().all(|e| e.report.failure.is_some()),
        quantities,
        parameters,
        recommendations: Vec::new(),
        series,
    }
}

fn recommendations(state: &PipelineState, summary: &SummaryReport) -> Vec<String> {
    let Some(plan) = &state.plan else { return Vec::new() };
    if summary.improvement_pct >= plan.target_improvement_pct {
        return Vec::new();
    }
    let mut out = Vec::new();
    if summary.all_failed {
        let cause = state.evaluations[0].report.failure.clone().unwrap_or_default();
        out.push(format!(
            "Every simulation failed ({cause}); check the simulator backend before rerunning."
        ));
    }
    if let Some(config) = &state.optimizer_config {
        if config.n_total < plan.n_total {
            out.push(format!(
                "The evaluation budget was reduced from the planned {} to {}; the shortfall may come from the limited number of iterations.",
                plan.n_total, config.n_total
            ));
        }
        if state.evaluations.len() < config.n_total {
            out.push(format!(
                "The run stopped after {} of {} evaluations; resume or rerun with the full budget.",
                state.evaluations.len(),
                config.n_total
            ));
        }
    }
    let varied: BTreeSet<Family> = state
        .specs()
        .iter()
        .filter_map(|s| Family::of_parameter(&s.name))
        .collect();
    for family in [
        Family::LayerPermeability,
        Family::RelpermEndpoints,
        Family::PorosityGroups,
        Family::FaultMultipliers,
    ] {
        if varied.contains(&family) || family_candidates(&state.deck, family, &state.options.bounds).is_empty() {
            continue;
        }
        let why = if plan.parameter_families.contains(&family) {
            "was planned but not varied"
        } else {
            "was not part of the plan"
        };
        out.push(format!(
            "The {} family {why}; adding it may capture the missing sensitivity.",
            family.label()
        ));
    }
    if let (Some(space), Some(best)) = (&state.space, &state.best) {
        if let Ok(unit) = space.to_unit_cube(&best.assignment) {
            for (s, u) in space.specs().iter().zip(unit) {
                let side = if u <= AT_BOUND {
                    "lower"
                } else if u >= 1.0 - AT_BOUND {
                    "upper"
                } else {
                    continue;
                };
                out.push(format!(
                    "{} finished at its {side} bound ({}); widening its range may help.",
                    s.name,
                    best.assignment.get(&s.name).unwrap_or(s.initial)
                ));
            }
        }
    }
    if out.is_empty() {
        out.push(format!(
            "The match stalled at {}% improvement against a {}% target; add parameter families or increase the iteration budget.",
            summary.improvement_rounded, plan.target_improvement_pct
        ));
    }
    out
}

pub fn summarizer_agent(state: &mut PipelineState, ctx: &mut Context) -> Result<(), PipelineError> {
    state.require(Phase::Summarizing)?;
    let summary = compute_summary(state, ctx.backend);
    let briefing = format!(
        "Initial wNRMSE {}, best {}, improvement {}% over {} evaluations. Target {}%.",
        fmt_metric(summary.initial_metric),
        fmt_metric(summary.best_metric),
        summary.improvement_rounded,
        summary.evaluations,
        state.plan.as_ref().map_or(0.0, |p| p.target_improvement_pct)
    );
    let fallback = recommendations(state, &summary);
    state.summary = Some(summary);
    run_agent(state, ctx, Agent::Summarizer, briefing, |state| {
        let s = state.summary.as_ref().expect("summary set above");
        let mut text = format!(
            "wNRMSE {} -> {} over {} evaluations ({}% improvement).",
            fmt_metric(s.initial_metric),
            fmt_metric(s.best_metric),
            s.evaluations,
            s.improvement_rounded
        );
        if s.all_failed {
            text.push_str(" Every simulation failed.");
        }
        Ok(Script {
            calls: fallback
                .iter()
                .map(|t| ToolCall::AddRecommendation { text: t.clone() })
                .collect(),
            text,
        })
    })?;
    let below = state.plan.as_ref().is_some_and(|p| {
        state
            .summary
            .as_ref()
            .is_some_and(|s| s.improvement_pct < p.target_improvement_pct)
    });
    if let Some(s) = state.summary.as_mut() {
        if below && s.recommendations.is_empty() {
            s.recommendations = fallback;
        }
    }
    state.set_phase(Phase::Done);
    Ok(())
}
