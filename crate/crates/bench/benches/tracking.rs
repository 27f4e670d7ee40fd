use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use driftrack::experiments::{run_rate_sweep, ExperimentConfig};
use driftrack_bench::single_run;

fn tracking(c: &mut Criterion) {
    let mut g = c.benchmark_group("single_run");
    for (name, cfg) in [
        ("signal_static", "path.theta = 0.3\nconstants.lambda1 = 1\n"),
        ("signal_lipschitz", "path.kind = lipschitz\npath.d = 4\nconstants.lambda1 = 1\n"),
        ("quantile", "model.kind = quantile\npath.theta = 0.5\n"),
        ("arch1_truncated", "model.kind = arch1\npath.theta = 0.5\n"),
    ] {
        for n in [1_000usize, 10_000] {
            let text = format!("horizons = {n}\n{cfg}");
            g.bench_with_input(BenchmarkId::new(name, n), &text, |b, t| b.iter(|| single_run(black_box(t), 3).unwrap()));
        }
    }
    g.finish();

    let sweep = ExperimentConfig::parse("experiment = rate-sweep\nreplications = 32\nhorizons = 1000, 4000\npath.theta = 0.3\n").unwrap();
    c.bench_function("rate_sweep_32x2", |b| b.iter(|| run_rate_sweep(black_box(&sweep)).unwrap()));
}

criterion_group!(benches, tracking);
criterion_main!(benches);
