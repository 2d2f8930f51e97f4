use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use sensebus::harness::{run_experiment, ExperimentSpec, Parallelism, Transport};

fn timed(spec: ExperimentSpec, iters: u64) -> Duration {
    let report = run_experiment(&spec.with_repetitions(iters as usize)).expect("experiment runs");
    report.runs.iter().map(|ms| Duration::from_secs_f64(ms / 1e3)).sum()
}

fn transports(c: &mut Criterion) {
    let mut g = c.benchmark_group("transport");
    g.sample_size(10).measurement_time(Duration::from_secs(3));
    for (services, messages) in [(1, 1), (5, 1), (10, 1), (5, 100)] {
        for t in [Transport::Middleware, Transport::Baseline] {
            let id = BenchmarkId::new(t.to_string(), format!("{services}x{messages}"));
            g.bench_function(id, |b| {
                b.iter_custom(|iters| timed(ExperimentSpec::new(services, messages, t), iters))
            });
        }
    }
    g.finish();
}

fn fan_out(c: &mut Criterion) {
    let mut g = c.benchmark_group("fan_out");
    g.sample_size(10).measurement_time(Duration::from_secs(3));
    for t in [Transport::Middleware, Transport::Baseline] {
        for p in [Parallelism::Parallel, Parallelism::Sequential] {
            let id = BenchmarkId::new(t.to_string(), p.to_string());
            g.bench_function(id, |b| {
                b.iter_custom(|iters| timed(ExperimentSpec::new(10, 50, t).with_parallelism(p), iters))
            });
        }
    }
    g.finish();
}

criterion_group!(benches, transports, fan_out);
criterion_main!(benches);
