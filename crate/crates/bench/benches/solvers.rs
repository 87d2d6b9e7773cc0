use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use qbsde_bench::scalar_problem;
use qbsde_core::numerics::{heat_step, Region, SpaceGrid};
use qbsde_core::qbsde::{expansion, picard_solve, PicardSettings};

fn heat(c: &mut Criterion) {
    let mut g = c.benchmark_group("heat_step");
    for nodes in [401, 1601] {
        let space = SpaceGrid::for_horizon(1.0, nodes).unwrap();
        let u: Vec<f64> = space.points().map(f64::sin).collect();
        g.bench_with_input(BenchmarkId::from_parameter(nodes), &u, |b, u| {
            b.iter(|| heat_step(&space, black_box(u), 1, 1.0 / 200.0).unwrap())
        });
    }
    g.finish();
}

fn picard(c: &mut Criterion) {
    let mut g = c.benchmark_group("picard");
    g.sample_size(10);
    for (steps, nodes) in [(100, 201), (200, 401)] {
        let spec = scalar_problem(steps, nodes, 1.0);
        let settings = PicardSettings::default();
        g.bench_function(BenchmarkId::from_parameter(format!("{steps}x{nodes}")), |b| {
            b.iter(|| picard_solve(&spec, black_box(0.3), &settings).unwrap())
        });
    }
    g.finish();
}

fn series(c: &mut Criterion) {
    let mut g = c.benchmark_group("expansion");
    g.sample_size(10);
    let spec = scalar_problem(100, 201, 1.0);
    for order in [2, 6] {
        g.bench_with_input(BenchmarkId::from_parameter(order), &order, |b, &k| {
            b.iter(|| expansion(&spec, k, None, Region::Core).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, heat, picard, series);
criterion_main!(benches);
