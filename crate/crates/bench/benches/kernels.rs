use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use rollhol::connections::{rolling_curvature, rolling_transport, FiberMetric};
use rollhol::holonomy::{estimate_algebra, generate_loops, HolonomyOptions};
use rollhol::manifold::heisenberg;
use rollhol::rolling::{develop, RollingState};
use rollhol::parse_expr;
use rollhol_bench::wiggle;

fn transport(c: &mut Criterion) {
    let h = heisenberg(1);
    let mut group = c.benchmark_group("rolling_transport");
    for steps in [64, 256, 512] {
        let lp = wiggle(steps);
        group.bench_with_input(BenchmarkId::from_parameter(steps), &lp, |b, lp| {
            b.iter(|| rolling_transport(&h, FiberMetric::SPHERE, black_box(lp)).unwrap())
        });
    }
    group.finish();
}

fn curvature(c: &mut Criterion) {
    let h = heisenberg(1);
    c.bench_function("rolling_curvature", |b| {
        b.iter(|| rolling_curvature(&h, FiberMetric::SPHERE, black_box(&[0.3, -0.2, 0.1]), &[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]))
    });
}

fn holonomy(c: &mut Criterion) {
    let h = heisenberg(1);
    let base = [0.0; 3];
    let loops = generate_loops(&h, &base, 16, 7).unwrap();
    let mut group = c.benchmark_group("holonomy");
    group.sample_size(10);
    group.bench_function("estimate_algebra_16_loops", |b| {
        b.iter(|| estimate_algebra(&h, &base, black_box(&loops), &HolonomyOptions::default()).unwrap())
    });
    group.finish();
}

fn development(c: &mut Criterion) {
    let e = rollhol::manifold::euclidean(2);
    let lp = wiggle(256).projected(2);
    let q0 = RollingState::standard(&lp.start());
    c.bench_function("develop_plane_256", |b| b.iter(|| develop(&e, black_box(&lp), &q0).unwrap()));
}

fn expressions(c: &mut Criterion) {
    let expr = parse_expr("4/(1+x^2+y^2+z^2)^2 + sin(x*y) - exp(-z)", &["x", "y", "z"]).unwrap();
    c.bench_function("expr_eval", |b| b.iter(|| expr.eval(black_box(&[0.3, -0.2, 0.1]))));
    c.bench_function("expr_parse", |b| {
        b.iter(|| parse_expr(black_box("4/(1+x^2+y^2+z^2)^2 + sin(x*y) - exp(-z)"), &["x", "y", "z"]).unwrap())
    });
}

criterion_group!(benches, transport, curvature, holonomy, development, expressions);
criterion_main!(benches);
