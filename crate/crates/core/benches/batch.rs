use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use phaseslip::dynamics::{first_passage, run_batch, Boundary, LinearOu, SimConfig, State};
use phaseslip::model::{build_melnikov_system, compute_exponents};
use phaseslip::par::Parallelism;
use std::hint::black_box;

const MODES: [(&str, Parallelism); 2] = [("sequential", Parallelism::Sequential), ("auto", Parallelism::Auto)];

fn linear_exits(c: &mut Criterion) {
    let ou = LinearOu::new(1.0, 0.01).unwrap();
    let mut group = c.benchmark_group("linear_exit_batch");
    for (name, mode) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &mode, |b, &mode| {
            b.iter(|| {
                let batch = run_batch(20_000, 7, mode, |_, rng| ou.exit(0.0, Some(-1.0), Some(1.0), 1e3, rng));
                black_box(batch.failure_count())
            })
        });
    }
    group.finish();
}

fn planar_passages(c: &mut Criterion) {
    let spec = build_melnikov_system(0.05, 1.0).unwrap();
    let constants = compute_exponents(&spec).unwrap();
    let config = SimConfig::new(0.5, &constants).with_max_time(50.0);
    let boundaries = [Boundary::flat("unstable", 0.0), Boundary::flat("lower", -1.0)];
    let mut group = c.benchmark_group("planar_passage_batch");
    group.sample_size(10);
    for (name, mode) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &mode, |b, &mode| {
            b.iter(|| {
                let batch = run_batch(256, 11, mode, |_, rng| {
                    first_passage(&spec, &config, State::new(-0.5, 0.0), &boundaries, rng)
                });
                black_box(batch.failure_count())
            })
        });
    }
    group.finish();
}

criterion_group!(benches, linear_exits, planar_passages);
criterion_main!(benches);
