//! One PASS/FAIL line per acceptance criterion. Runs without the test
//! harness so the lines always print; exits nonzero if any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use common::fixture;
use petromatch_core::deck::{dir_resolver, Deck, Slot, Token};
use petromatch_core::exec::ExecMode;
use petromatch_core::misfit::{objective, ObservationSet, QuantityClass, QuantityKind, Series};
use petromatch_core::optimizer::testfns::branin;
use petromatch_core::optimizer::{
    ei, expected_improvement, fit_gp, lhs_sample, random_search_baseline, Acquisition, Kernel, OptimizerConfig,
    OptimizerSession,
};
use petromatch_core::paramspace::{dry_run_validate, FindingKind, ParameterSpace, RelpermValidator};
use petromatch_core::pipeline::{
    improvement_pct, repair_space, round_half_up, run_pipeline, Interaction, Phase, RunOptions,
};
use petromatch_core::simulator::Backend;
use petromatch_service::input::load_observations;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

/// Name, check and time limit.
type Criterion = (&'static str, fn() -> Outcome, Duration);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

const WELLS: [&str; 5] = ["P1", "P2", "I1", "I2", "P3"];

fn random_times(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut t = 0.0;
    (0..n)
        .map(|_| {
            t += rng.random_range(1.0..40.0);
            t
        })
        .collect()
}

/// A random history: up to 5 wells, up to 4 quantities, up to 20 steps,
/// with the odd all-zero series.
fn random_history(rng: &mut ChaCha8Rng) -> Vec<Series> {
    let n_wells = rng.random_range(1..=5);
    let mut kinds = QuantityKind::ALL.to_vec();
    let n_kinds = rng.random_range(1..=4);
    let mut picked = Vec::new();
    for _ in 0..n_kinds {
        picked.push(kinds.remove(rng.random_range(0..kinds.len())));
    }
    let steps = rng.random_range(1..=20);
    let times = random_times(rng, steps);
    let mut out = Vec::new();
    for w in &WELLS[..n_wells] {
        for q in &picked {
            let zero = rng.random_bool(0.1);
            let values = (0..steps)
                .map(|_| if zero { 0.0 } else { rng.random_range(1.0..500.0) })
                .collect();
            out.push(Series::new(*w, *q, times.clone(), values).unwrap());
        }
    }
    out
}

fn oracle_cumulative(s: &Series) -> f64 {
    if s.values.len() == 1 {
        return s.values[0];
    }
    let mut c = 0.0;
    for i in 1..s.times.len() {
        c += (s.times[i] - s.times[i - 1]) * (s.values[i] + s.values[i - 1]) / 2.0;
    }
    c
}

fn oracle_weight(history: &[Series], s: &Series) -> f64 {
    let nonzero = |x: &&Series| x.quantity == s.quantity && x.values.iter().any(|v| *v != 0.0);
    if !nonzero(&s) {
        return 0.0;
    }
    let peers: Vec<&Series> = history.iter().filter(nonzero).collect();
    if s.quantity.class() == QuantityClass::Pressure {
        return 1.0 / peers.len() as f64;
    }
    let total: f64 = peers.iter().map(|p| oracle_cumulative(p)).sum();
    oracle_cumulative(s) / total
}

fn oracle_interp(times: &[f64], values: &[f64], t: f64) -> f64 {
    if t <= times[0] {
        return values[0];
    }
    for i in 1..times.len() {
        if t <= times[i] {
            let f = (t - times[i - 1]) / (times[i] - times[i - 1]);
            return values[i - 1] + f * (values[i] - values[i - 1]);
        }
    }
    values[values.len() - 1]
}

fn oracle_objective(history: &[Series], sim: &[Series]) -> f64 {
    let mut total = 0.0;
    for h in history {
        let w = oracle_weight(history, h);
        if w == 0.0 {
            continue;
        }
        let s = sim
            .iter()
            .find(|s| s.well == h.well && s.quantity == h.quantity)
            .unwrap();
        let n = h.values.len() as f64;
        let mut sq = 0.0;
        let mut mean = 0.0;
        for (t, y) in h.times.iter().zip(&h.values) {
            let d = oracle_interp(&s.times, &s.values, *t) - y;
            sq += d * d;
            mean += y;
        }
        mean /= n;
        total += w * (sq / n).sqrt() / mean;
    }
    total
}

fn objective_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for case in 0..200 {
        let history = random_history(&mut rng);
        let sim: Vec<Series> = history
            .iter()
            .map(|h| {
                // Half the cases simulate on their own grid.
                let times = if case % 2 == 0 {
                    h.times.clone()
                } else {
                    let n = rng.random_range(2..=25);
                    random_times(&mut rng, n)
                };
                let values = times.iter().map(|_| rng.random_range(0.0..600.0)).collect();
                Series::new(h.well.clone(), h.quantity, times, values).unwrap()
            })
            .collect();
        let obs = ObservationSet::new(history.clone()).map_err(|e| e.to_string())?;
        let got = objective(&obs, &sim).total;
        let want = oracle_objective(&history, &sim);
        ensure(close(got, want, 1e-12), || {
            format!("case {case}: {got} vs oracle {want}")
        })?;
        if want > 0.0 {
            worst = worst.max((got - want).abs() / want);
        }
    }
    Ok(format!("200 sets, worst relative error {worst:.1e}"))
}

fn weight_rules() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..200 {
        let history = random_history(&mut rng);
        let obs = ObservationSet::new(history.clone()).map_err(|e| e.to_string())?;
        for q in QuantityKind::ALL {
            let of_q: Vec<&Series> = history.iter().filter(|s| s.quantity == q).collect();
            let nonzero = of_q.iter().filter(|s| s.values.iter().any(|v| *v != 0.0)).count();
            if nonzero == 0 {
                continue;
            }
            let weights: Vec<f64> = of_q.iter().map(|s| obs.weight(&s.well, q)).collect();
            let sum: f64 = weights.iter().sum();
            ensure((sum - 1.0).abs() < 1e-9, || {
                format!("case {case}: {q} weights sum to {sum}")
            })?;
            if q == QuantityKind::Wbhp {
                for (s, w) in of_q.iter().zip(&weights) {
                    let expect = if s.values.iter().any(|v| *v != 0.0) {
                        1.0 / nonzero as f64
                    } else {
                        0.0
                    };
                    ensure(*w == expect, || {
                        format!("case {case}: WBHP:{} weight {w}, want {expect}", s.well)
                    })?;
                }
            }
        }
    }
    let step = |v: f64| Series::new("P", QuantityKind::Wopr, vec![0.0, 10.0], vec![v, v]).unwrap();
    let mut a = step(30.0);
    let b = Series {
        well: "Q".into(),
        ..step(10.0)
    };
    a.well = "P".into();
    let obs = ObservationSet::new(vec![a, b]).map_err(|e| e.to_string())?;
    let (wa, wb) = (obs.weight("P", QuantityKind::Wopr), obs.weight("Q", QuantityKind::Wopr));
    ensure(close(wa, 0.75, 1e-12) && close(wb, 0.25, 1e-12), || {
        format!("300/100 split gave {wa}/{wb}")
    })?;
    Ok("200 random sets; 300/100 cumulative gives 0.75/0.25".into())
}

fn deck_round_trip() -> Outcome {
    let dir = fixture("decks");
    let mut decks: Vec<_> = std::fs::read_dir(&dir)
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "DATA"))
        .collect();
    decks.sort();
    ensure(decks.len() >= 10, || format!("only {} decks", decks.len()))?;
    for name in ["spe1.DATA", "schedule_heavy.DATA"] {
        ensure(decks.iter().any(|p| p.ends_with(name)), || {
            format!("{name} missing from the corpus")
        })?;
    }
    for path in &decks {
        let deck = Deck::from_path(path).map_err(|e| e.to_string())?;
        for (file, text) in deck.render_files() {
            let original = std::fs::read_to_string(dir.join(&file)).map_err(|e| e.to_string())?;
            ensure(text == original, || format!("{file} does not round-trip"))?;
        }
        let again =
            Deck::parse_named(deck.main_file(), &deck.render(), &dir_resolver(&dir)).map_err(|e| e.to_string())?;
        ensure(again.structure() == deck.structure(), || {
            format!("{} reparses differently", path.display())
        })?;

        // Edit one keyword in the main file; everything outside its span
        // must be untouched.
        let Some(kw) = deck.keywords().find(|k| {
            k.origin().file == deck.main_file() && !k.records().is_empty() && !matches!(k.name(), "TITLE" | "INCLUDE")
        }) else {
            continue;
        };
        let (section, name) = (kw.section().to_string(), kw.name().to_string());
        let occurrence = deck
            .keywords()
            .filter(|k| k.section() == section && k.name() == name)
            .position(|k| std::ptr::eq(k, kw))
            .unwrap();
        let mut records = kw.records().to_vec();
        records[0].items.push(Token::number(1.5));
        let edited = deck
            .set_keyword(&section, &name, Slot::Occurrence(occurrence), records)
            .map_err(|e| e.to_string())?;
        let (before, after) = (deck.render(), edited.render());
        let (start, end) = deck.span_of(&section, &name, occurrence).unwrap();
        let (_, new_end) = edited.span_of(&section, &name, occurrence).unwrap();
        ensure(
            after[..start] == before[..start] && after[new_end..] == before[end..],
            || format!("{}: edit of {name} leaks outside its span", path.display()),
        )?;
    }
    Ok(format!("{} decks byte-identical; edits confined", decks.len()))
}

fn dry_run() -> Outcome {
    let text = std::fs::read_to_string(fixture("manifests/relperm_bad.json")).map_err(|e| e.to_string())?;
    let manifest = ParameterSpace::parse_manifest(&text).map_err(|e| e.to_string())?;
    let deck = Deck::from_path(&fixture("decks/spe1.DATA")).map_err(|e| e.to_string())?;
    let space = ParameterSpace::from_manifest(deck, &manifest).map_err(|e| e.to_string())?;
    let report = dry_run_validate(&space, &[&RelpermValidator]);
    let finding = report.findings().next().map(|(_, f)| f.clone());
    let finding = finding.ok_or("the bad bound was not caught")?;
    ensure(finding.kind == FindingKind::RelpermMonotonicity, || {
        format!("{:?}", finding.kind)
    })?;
    ensure(
        finding.message.contains("non-monotonic relative permeability curve"),
        || finding.message.clone(),
    )?;
    let repaired = repair_space(&space, &report);
    ensure(dry_run_validate(&repaired.space, &[&RelpermValidator]).ok, || {
        "repair did not fix it".into()
    })?;
    let spec = repaired.space.spec("SWOF_KRW_4").unwrap();
    Ok(format!("caught; repaired bounds [{}, {}]", spec.lower, spec.upper))
}

fn lhs_strata() -> Outcome {
    for n in [4usize, 16, 32] {
        for d in [2usize, 8] {
            for seed in 0..5 {
                let pts = lhs_sample(n, d, seed);
                ensure(pts == lhs_sample(n, d, seed), || {
                    format!("n={n} d={d} seed={seed} not deterministic")
                })?;
                for axis in 0..d {
                    let mut hits = vec![0usize; n];
                    for p in &pts {
                        let v = p[axis];
                        ensure((0.0..1.0).contains(&v), || format!("coordinate {v} outside [0,1)"))?;
                        hits[(v * n as f64) as usize] += 1;
                    }
                    ensure(hits.iter().all(|h| *h == 1), || {
                        format!("n={n} d={d} axis {axis}: {hits:?}")
                    })?;
                }
            }
        }
    }
    Ok("n in {4,16,32}, d in {2,8}, one point per stratum".into())
}

fn gp_and_ei() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x: Vec<Vec<f64>> = lhs_sample(12, 3, 9);
    let y: Vec<f64> = x.iter().map(|p| (4.0 * p[0]).sin() + p[1] * p[2] - p[2]).collect();
    let gp = fit_gp(&x, &y, Kernel::Matern52, 1, ExecMode::Sequential).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for (p, v) in x.iter().zip(&y) {
        worst = worst.max((gp.predict_standardized(p).0 - gp.standardize(*v)).abs());
    }
    ensure(worst < 1e-6, || {
        format!("posterior misses a training target by {worst}")
    })?;
    let best = y.iter().copied().fold(f64::INFINITY, f64::min);
    for _ in 0..10_000 {
        let q: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
        let v = expected_improvement(&gp, &q, best, 0.0);
        ensure(v >= 0.0, || format!("EI {v} < 0 at {q:?}"))?;
    }
    let spot = ei(0.0, 1.0, 1.0, 0.0);
    ensure((spot - 1.08332).abs() < 1e-5, || format!("EI spot value {spot}"))?;
    Ok(format!(
        "interpolation error {worst:.1e}; EI >= 0 on 10000 queries; EI(1) = {spot:.5}"
    ))
}

fn bo_beats_random() -> Outcome {
    let bo: Vec<f64> = (0..20u64)
        .map(|seed| {
            let mut s = OptimizerSession::new(OptimizerConfig::new(2, 8, 40, Acquisition::Ei, seed)).unwrap();
            for _ in 0..40 {
                let p = s.ask().unwrap();
                s.tell(&p, branin(&p)).unwrap();
            }
            s.best().unwrap().value
        })
        .collect();
    let rs: Vec<f64> = (0..20u64)
        .map(|seed| {
            random_search_baseline(40, 2, seed)
                .iter()
                .map(|p| branin(p))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let (mb, mr) = (median(bo), median(rs));
    ensure(mb <= mr, || format!("median best: GP-EI {mb:.4}, random {mr:.4}"))?;
    Ok(format!("median best: GP-EI {mb:.4} <= random {mr:.4}"))
}

fn end_to_end() -> Outcome {
    let deck = Deck::from_path(&fixture("decks/spe1.DATA")).map_err(|e| e.to_string())?;
    let obs = load_observations(&fixture("observations/spe1_pseudo.csv")).map_err(|e| e.to_string())?;
    let backend = Backend::default();
    let mut reductions = Vec::new();
    for seed in 0..20u64 {
        let options = RunOptions {
            seed,
            budget: Some(80),
            ..RunOptions::default()
        };
        let state = run_pipeline(deck.clone(), obs.clone(), &backend, Interaction::AutoApprove, options);
        ensure(state.phase == Phase::Done, || {
            format!("seed {seed}: {:?}", state.failure)
        })?;
        let config = state.optimizer_config.as_ref().unwrap();
        ensure(config.n_total == 80 && config.n_initial == 32, || {
            format!("seed {seed}: {} initial of {}", config.n_initial, config.n_total)
        })?;
        reductions.push(state.summary.as_ref().unwrap().improvement_pct);
    }
    let hits = reductions.iter().filter(|r| **r >= 90.0).count();
    let min = reductions.iter().copied().fold(f64::INFINITY, f64::min);
    ensure(hits >= 18, || format!("{hits}/20 seeds reach 90%; worst {min:.1}%"))?;
    Ok(format!(
        "{hits}/20 seeds reach 90%; worst {min:.1}%, median {:.1}%",
        median(reductions)
    ))
}

fn improvement_arithmetic() -> Outcome {
    for (initial, best, want) in [(0.7823, 0.0366, 95.0), (0.9510, 0.2901, 69.0), (2.3121, 2.0128, 13.0)] {
        let got = round_half_up(improvement_pct(initial, best));
        ensure((got - want).abs() <= 1.0, || {
            format!("({initial}, {best}) gave {got}%, want {want}%")
        })?;
    }
    Ok("95%, 69%, 13%".into())
}

fn cli_run(out: &Path) -> Result<(), String> {
    let status = std::process::Command::new(common::bin())
        .args(["run", "--auto-approve", "--seed", "21", "--budget", "40", "--deck"])
        .arg(fixture("decks/spe1.DATA"))
        .arg("--obs")
        .arg(fixture("observations/spe1_pseudo.csv"))
        .arg("--out")
        .arg(out)
        .env_remove("PETROMATCH_LLM_URL")
        .output()
        .map_err(|e| e.to_string())?;
    ensure(status.status.success(), || {
        String::from_utf8_lossy(&status.stderr).into_owned()
    })
}

fn determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    cli_run(a.path())?;
    cli_run(b.path())?;
    let read = |d: &Path| std::fs::read(d.join("evaluations.csv")).map_err(|e| e.to_string());
    let (la, lb) = (read(a.path())?, read(b.path())?);
    ensure(la == lb, || "evaluation logs differ".into())?;
    Ok(format!("two runs, {} identical bytes", la.len()))
}

fn crash_recovery() -> Outcome {
    let r = common::crash_and_resume(31, 48, 12);
    ensure(r.final_status["status"] == "done", || {
        format!("resumed run ended {}", r.final_status)
    })?;
    ensure(r.killed_after >= 12 && r.killed_after < 48, || {
        format!("killed after {}", r.killed_after)
    })?;
    let at_kill: Vec<&str> = r.log_at_kill.lines().collect();
    let fin: Vec<&str> = r.final_log.lines().collect();
    ensure(fin.len() == 49, || format!("final log has {} rows", fin.len() - 1))?;
    ensure(fin[..at_kill.len()] == at_kill[..], || {
        "logged rows changed after restart".into()
    })?;
    Ok(format!(
        "killed after {} evaluations; resumed to 48 with them intact",
        r.killed_after
    ))
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("objective oracle", objective_oracle, Duration::from_secs(10)),
        ("weight rules", weight_rules, Duration::from_secs(1)),
        ("deck round-trip", deck_round_trip, Duration::from_secs(5)),
        ("dry-run validation", dry_run, Duration::from_secs(1)),
        ("LHS strata", lhs_strata, Duration::MAX),
        ("GP and EI", gp_and_ei, Duration::MAX),
        ("BO beats random", bo_beats_random, Duration::from_secs(120)),
        ("end-to-end SPE1 analogue", end_to_end, Duration::from_secs(300)),
        ("improvement arithmetic", improvement_arithmetic, Duration::MAX),
        ("determinism", determinism, Duration::MAX),
        ("crash recovery", crash_recovery, Duration::MAX),
    ];
    let total = criteria.len();
    let mut failed = BTreeMap::new();
    for (name, check, limit) in criteria {
        let start = Instant::now();
        let outcome = check();
        let took = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if took > limit => Err(format!("{detail}; took {took:.1?}, limit {limit:.0?}")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail} ({took:.1?})"),
            Err(why) => {
                println!("FAIL {name}: {why} ({took:.1?})");
                failed.insert(name, why);
            }
        }
    }
    println!("{} of {total} criteria passed", total - failed.len());
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
