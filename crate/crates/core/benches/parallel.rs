use std::hint::black_box;
use std::path::Path;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use petromatch_core::deck::{Deck, TokenPath};
use petromatch_core::exec::ExecMode;
use petromatch_core::optimizer::{fit_gp, lhs_sample, Acquisition, Kernel, OptimizerConfig, OptimizerSession};
use petromatch_core::paramspace::{Assignment, ParameterSpace, ParameterSpec, Scale};
use petromatch_core::simulator::{evaluate_batch, make_pseudo_history, Backend};

const MODES: [(&str, ExecMode); 2] = [("sequential", ExecMode::Sequential), ("parallel", ExecMode::Parallel)];

fn sphere(p: &[f64]) -> f64 {
    p.iter().map(|x| (x - 0.3) * (x - 0.3)).sum()
}

fn gp_fit(c: &mut Criterion) {
    let points = lhs_sample(48, 8, 1);
    let values: Vec<f64> = points.iter().map(|p| sphere(p)).collect();
    let mut group = c.benchmark_group("gp_fit_48x8");
    group.sample_size(10);
    for (name, mode) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| fit_gp(black_box(&points), &values, Kernel::default(), 7, mode).unwrap())
        });
    }
    group.finish();
}

/// One model-guided ask: GP fit, pool scoring and local refinement.
fn ask(c: &mut Criterion) {
    let mut group = c.benchmark_group("ask_after_40_d8");
    group.sample_size(10);
    for (name, mode) in MODES {
        let mut config = OptimizerConfig::new(8, 32, 80, Acquisition::GpHedge, 3);
        config.exec = mode;
        let mut session = OptimizerSession::new(config).unwrap();
        for _ in 0..40 {
            let p = session.ask().unwrap();
            session.tell(&p, sphere(&p)).unwrap();
        }
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                let mut s = session.clone();
                s.ask().unwrap()
            })
        });
    }
    group.finish();
}

fn batch_evaluation(c: &mut Criterion) {
    let deck = Deck::from_path(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/decks/spe1.DATA")).unwrap();
    let mut space = ParameterSpace::new(deck);
    for (l, v) in [500.0, 50.0, 200.0].into_iter().enumerate() {
        let spec = ParameterSpec {
            name: format!("PERM_L{}", l + 1),
            lower: v / 10.0,
            upper: v * 10.0,
            initial: v,
            scale: Scale::Log10,
            unit: "mD".into(),
            target: TokenPath {
                section: "GRID".into(),
                keyword: "PERMX".into(),
                occurrence: 0,
                record: 0,
                item: l,
            },
        };
        space = space.add_parameter(spec).unwrap();
    }
    let backend = Backend::default();
    let obs = make_pseudo_history(&space, &space.initial(), &backend)
        .unwrap()
        .observations;
    let batch: Vec<Assignment> = lhs_sample(8, 3, 5)
        .iter()
        .map(|u| space.from_unit_cube(u).unwrap())
        .collect();
    let mut group = c.benchmark_group("proxy_batch_8");
    group.sample_size(10);
    for (name, mode) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| evaluate_batch(&space, black_box(&batch), &backend, &obs, mode))
        });
    }
    group.finish();
}

criterion_group!(benches, gp_fit, ask, batch_evaluation);
criterion_main!(benches);
