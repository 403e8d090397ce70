use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use partmc::diagnostics::{autocovariance, series_autocorr_time};
use partmc::partition::{best_cut_nd, build_tree, PartitionConfig};
use partmc_bench::{ar1, draws, target};

fn log_density(c: &mut Criterion) {
    let mut g = c.benchmark_group("log_density");
    for name in ["mix2d", "mix9d"] {
        let t = target(name);
        let pts = draws(name, 1024, 3);
        g.bench_function(name, |b| {
            b.iter(|| {
                (0..pts.len())
                    .map(|i| t.log_density(black_box(pts.row(i))))
                    .sum::<f64>()
            })
        });
    }
    g.finish();
}

fn best_cut(c: &mut Criterion) {
    let mut g = c.benchmark_group("best_cut");
    for n in [1_000, 10_000] {
        let pts = draws("mix9d", n, 4);
        g.bench_with_input(BenchmarkId::from_parameter(n), &pts, |b, p| {
            b.iter(|| best_cut_nd(black_box(p)))
        });
    }
    g.finish();

    let t = target("mix9d");
    let pts = draws("mix9d", 25_000, 5);
    let cfg = PartitionConfig {
        max_subspaces: 32,
        ..PartitionConfig::default()
    };
    c.bench_function("build_tree/32", |b| {
        b.iter(|| build_tree(black_box(&pts), &t.support, &cfg).unwrap())
    });
}

fn autocorrelation(c: &mut Criterion) {
    let mut g = c.benchmark_group("autocovariance");
    for n in [1_000, 100_000] {
        let x = ar1(n, 0.9, 6);
        g.bench_with_input(BenchmarkId::new("full", n), &x, |b, x| {
            b.iter(|| autocovariance(black_box(x), x.len() - 1).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("tau", n), &x, |b, x| {
            b.iter(|| series_autocorr_time(black_box(x)))
        });
    }
    g.finish();
}

criterion_group!(benches, log_density, best_cut, autocorrelation);
criterion_main!(benches);
