use ar1ph::exec::ExecPolicy;
use ar1ph::montecarlo::{simulate, McConfig};
use ar1ph::passage::ResidueSystem;
use ar1ph::suite::two_phase_model;
use ar1ph::{GainFunction, TransformEngine};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

const POLICIES: [(&str, ExecPolicy); 2] = [
    ("sequential", ExecPolicy::Sequential),
    ("parallel", ExecPolicy::Parallel),
];

fn bench_simulate(c: &mut Criterion) {
    let model = two_phase_model().unwrap();
    let mut group = c.benchmark_group("simulate_50k_paths");
    group.sample_size(10);
    for (name, policy) in POLICIES {
        let cfg = McConfig::new(50_000, 1).with_policy(policy);
        group.bench_with_input(BenchmarkId::from_parameter(name), &cfg, |b, cfg| {
            b.iter(|| simulate(&model, 0.0, 1.0, &GainFunction::Identity, black_box(cfg), false).unwrap())
        });
    }
    group.finish();
}

fn bench_passage_grid(c: &mut Criterion) {
    let engine = TransformEngine::new(two_phase_model().unwrap()).unwrap();
    let sys = ResidueSystem::build(&engine, 1.0).unwrap();
    let xs: Vec<f64> = (0..2000).map(|k| -3.0 + 3.9 * k as f64 / 2000.0).collect();
    let mut group = c.benchmark_group("passage_grid_2000");
    for (name, policy) in POLICIES {
        group.bench_function(name, |b| b.iter(|| sys.solve_grid(black_box(&xs), policy).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, bench_simulate, bench_passage_grid);
criterion_main!(benches);
