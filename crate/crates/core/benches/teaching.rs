use std::hint::black_box;

use collab_teach::dataset::{gen_synthetic, make_target, shard, SyntheticSpec, Task};
use collab_teach::engine::{run_teaching, sweep_budgets, TeachingConfig};
use collab_teach::Execution;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

const FRACTIONS: [f64; 7] = [0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0];

fn modes() -> [(&'static str, Execution); 2] {
    [("serial", Execution::Serial), ("parallel", Execution::Parallel)]
}

fn bench_rounds(c: &mut Criterion) {
    let mut group = c.benchmark_group("run_teaching");
    group.sample_size(10);
    for (n, k) in [(5_000, 5), (20_000, 10)] {
        let ds = gen_synthetic(&SyntheticSpec::new(Task::Classification, n, 10, 4, 1)).unwrap();
        let goal = make_target(&ds, 0.01, 1.0, 1).unwrap();
        let shards = shard(&ds, k, 1).unwrap();
        for (name, execution) in modes() {
            let cfg = TeachingConfig {
                rounds: 20,
                execution,
                ..TeachingConfig::for_task(Task::Classification)
            };
            group.bench_with_input(BenchmarkId::new(name, format!("n{n}_k{k}")), &cfg, |b, cfg| {
                b.iter(|| run_teaching(black_box(&shards), &goal.theta_star, Task::Classification, cfg).unwrap())
            });
        }
    }
    group.finish();
}

fn bench_sweep(c: &mut Criterion) {
    let mut group = c.benchmark_group("sweep_budgets");
    group.sample_size(10);
    let ds = gen_synthetic(&SyntheticSpec::new(Task::Classification, 5_000, 10, 4, 2)).unwrap();
    let goal = make_target(&ds, 0.01, 1.0, 2).unwrap();
    let shards = shard(&ds, 5, 2).unwrap();
    for (name, execution) in modes() {
        let cfg = TeachingConfig {
            rounds: 10,
            execution,
            ..TeachingConfig::for_task(Task::Classification)
        };
        group.bench_function(name, |b| {
            b.iter(|| sweep_budgets(black_box(&shards), &goal.theta_star, Task::Classification, &cfg, &FRACTIONS).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_rounds, bench_sweep);
criterion_main!(benches);
