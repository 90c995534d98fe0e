//! Sequential vs rayon trial execution on small end-to-end runs.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use noisy_conformal::fnr::{simulate_fnr_trials, FnrSettings, MultiLabelScenario};
use noisy_conformal::harness::{run_experiment, ExperimentConfig};
use noisy_conformal::Execution;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn classification(c: &mut Criterion) {
    let cfg = ExperimentConfig::from_json(
        r#"{"task": "classification", "generator": {"kind": "classification", "k": 10, "d": 20},
            "score": "aps", "noise": {"kind": "uniform-flip", "epsilon": 0.1}, "alpha": 0.1,
            "n_cal": 500, "n_test": 500, "trials": 32, "seed": 1, "bounds": ["random-flip"]}"#,
    )
    .unwrap();
    let mut g = c.benchmark_group("classification");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| black_box(run_experiment(&cfg, exec).unwrap()))
        });
    }
    g.finish();
}

fn regression(c: &mut Criterion) {
    let cfg = ExperimentConfig::from_json(
        r#"{"task": "regression", "generator": {"kind": "regression", "d": 20},
            "model": "linear-quantile", "score": "cqr",
            "noise": {"kind": "additive", "additive_dist": "gauss", "c": 0.5}, "alpha": 0.1,
            "n_train": 500, "n_cal": 500, "n_test": 500, "trials": 32, "seed": 2}"#,
    )
    .unwrap();
    let mut g = c.benchmark_group("regression");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| black_box(run_experiment(&cfg, exec).unwrap()))
        });
    }
    g.finish();
}

fn fnr(c: &mut Criterion) {
    let settings = FnrSettings { n_cal: 200, n_test: 200, trials: 32, seed: 3, grid_points: 201 };
    let scenario = MultiLabelScenario::deterministic();
    let mut g = c.benchmark_group("fnr");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| black_box(simulate_fnr_trials(&scenario, &[0.1, 0.2], &settings, exec).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, classification, regression, fnr);
criterion_main!(benches);
