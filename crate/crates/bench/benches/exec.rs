//! Sequential against rayon execution for the instance-parallel kernels.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use wsrm_core::bcd::{multistart_bcd, BcdConfig};
use wsrm_core::generate::{generate_dataset, GenConfig};
use wsrm_core::oracle::{label_dataset, LabelStrategy};
use wsrm_core::Exec;
use wsrm_learn::env::prepare;
use wsrm_learn::train::{evaluate, new_agent, EvalStart, TrainConfig};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn bench_generate(c: &mut Criterion) {
    let mut g = c.benchmark_group("generate_dataset");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::new(name, 512), |b| {
            b.iter(|| generate_dataset(&GenConfig::default(), 512, 7, exec).unwrap())
        });
    }
    g.finish();
}

fn bench_label(c: &mut Criterion) {
    let data = generate_dataset(&GenConfig::default(), 16, 7, Exec::Sequential).unwrap();
    let strategy = LabelStrategy::Grid { resolution: 1e-2 };
    let mut g = c.benchmark_group("label_grid");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::new(name, 16), |b| b.iter(|| label_dataset(&data, strategy, 7, exec).unwrap()));
    }
    g.finish();
}

fn bench_multistart(c: &mut Criterion) {
    let inst = generate_dataset(&GenConfig::default(), 1, 7, Exec::Sequential).unwrap().remove(0);
    let mut g = c.benchmark_group("multistart_bcd");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::new(name, 64), |b| {
            b.iter(|| multistart_bcd(&inst, 64, 7, &BcdConfig::default(), exec).unwrap())
        });
    }
    g.finish();
}

fn bench_evaluate(c: &mut Criterion) {
    let data = generate_dataset(&GenConfig::default(), 64, 7, Exec::Sequential).unwrap();
    let labeled = label_dataset(&data, LabelStrategy::Multistart { starts: 8 }, 7, Exec::Parallel).unwrap();
    let problems = prepare(&labeled).unwrap();
    let config = TrainConfig::default();
    let agent = new_agent(&config, 3).unwrap();
    let mut g = c.benchmark_group("evaluate");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::new(name, 64), |b| {
            b.iter(|| evaluate(&agent, &problems, &config.env, config.emit, &EvalStart::Random(1), exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, bench_generate, bench_label, bench_multistart, bench_evaluate);
criterion_main!(benches);
