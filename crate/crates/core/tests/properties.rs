//! Invariants of the rolling connection checked on random inputs.

use proptest::prelude::*;
use rollhol::connections::{fiber_inner, rolling_curvature, rolling_transport, FiberMetric, FiberVector};
use rollhol::geometry::{eval_metric, geodesic};
use rollhol::holonomy::{estimate_algebra, generate_loops, HolonomyOptions};
use rollhol::manifold::{euclidean, heisenberg, sphere};
use rollhol::rolling::{develop, rolling_residuals, RollingState};
use rollhol::structures::invariant_complex_structure;
use rollhol::{CurvePath, Mat, Vector};

fn point3() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-0.8f64..0.8, 3)
}

fn vec3() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, 3)
}

fn polyline(start: &[f64], offsets: &[Vec<f64>]) -> CurvePath {
    let mut pts = vec![start.to_vec()];
    for d in offsets {
        let last = pts.last().unwrap();
        pts.push(last.iter().zip(d).map(|(a, b)| a + b).collect());
    }
    CurvePath::polyline(&pts, false).unwrap()
}

fn steps() -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-0.3f64..0.3, 3), 1..4)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn transport_composes(x in point3(), a in steps(), b in steps()) {
        let h = heisenberg(1);
        let first = polyline(&x, &a);
        let second = polyline(&first.end(), &b);
        let whole = first.then(&second).unwrap();
        let m = FiberMetric::SPHERE;
        let p1 = rolling_transport(&h, m, &first).unwrap();
        let p2 = rolling_transport(&h, m, &second).unwrap();
        let p = rolling_transport(&h, m, &whole).unwrap();
        prop_assert!((&p.matrix - &p2.matrix * &p1.matrix).amax() < 1e-9);
    }

    #[test]
    fn reversed_path_inverts_transport(x in point3(), a in steps()) {
        let s = sphere(3, 1.0);
        let c = polyline(&x, &a);
        for m in [FiberMetric::SPHERE, FiberMetric::HYPERBOLIC] {
            let fwd = rolling_transport(&s, m, &c).unwrap();
            let back = rolling_transport(&s, m, &c.reversed()).unwrap();
            prop_assert!((&back.matrix * &fwd.matrix - Mat::identity(4, 4)).amax() < 1e-9);
        }
    }

    #[test]
    fn transport_preserves_fiber_metric(x in point3(), a in steps(), v in vec3(), r in -1.0f64..1.0) {
        let h = heisenberg(1);
        let c = polyline(&x, &a);
        for m in [FiberMetric::SPHERE, FiberMetric::HYPERBOLIC] {
            let p = rolling_transport(&h, m, &c).unwrap();
            prop_assert!(p.metric_defect() < 1e-9);
            let mut coords = v.clone();
            coords.push(r);
            let out = p.apply_coords(&coords);
            let before = fiber_inner(&h, m, &FiberVector::new(&x, &v, r), &FiberVector::new(&x, &v, r)).unwrap();
            let end = c.end();
            let moved = FiberVector::new(&end, &out[..3], out[3]);
            let after = fiber_inner(&h, m, &moved, &moved).unwrap();
            prop_assert!((before - after).abs() < 1e-9 * (1.0 + before.abs()));
        }
    }

    #[test]
    fn curvature_is_bilinear_and_skew(x in point3(), u in vec3(), v in vec3(), w in vec3(), a in -2.0f64..2.0) {
        let h = heisenberg(1);
        let m = FiberMetric::SPHERE;
        let f = |p: &[f64], q: &[f64]| rolling_curvature(&h, m, &x, p, q).unwrap();
        let combo: Vec<f64> = u.iter().zip(&v).map(|(p, q)| a * p + q).collect();
        let lhs = f(&combo, &w).matrix;
        let rhs = f(&u, &w).matrix * a + f(&v, &w).matrix;
        prop_assert!((lhs - rhs).amax() < 1e-10);
        let fuv = f(&u, &v);
        prop_assert!((&fuv.matrix + f(&v, &u).matrix).amax() < 1e-14);
        prop_assert!(fuv.skew_defect() < 1e-8);
    }

    #[test]
    fn geodesics_keep_their_speed(x in point3(), v in vec3()) {
        let h = heisenberg(1);
        let speed = |p: &[f64], w: &[f64]| {
            let g = eval_metric(&h, p).unwrap();
            let w = Vector::from_column_slice(w);
            (w.transpose() * g * &w)[(0, 0)]
        };
        let (x1, v1) = geodesic(&h, &x, &v, 0.5, 256).unwrap();
        prop_assert!((speed(&x1, &v1) - speed(&x, &v)).abs() < 1e-9);
    }

    #[test]
    fn development_satisfies_rolling_constraints(x in prop::collection::vec(-0.5f64..0.5, 2), a in prop::collection::vec(prop::collection::vec(-0.4f64..0.4, 2), 1..4)) {
        let e = euclidean(2);
        let mut pts = vec![x.clone()];
        for d in &a {
            let last = pts.last().unwrap();
            pts.push(vec![last[0] + d[0], last[1] + d[1]]);
        }
        let c = CurvePath::polyline(&pts, false).unwrap();
        let traj = develop(&e, &c, &RollingState::standard(&x)).unwrap();
        let r = rolling_residuals(&traj);
        prop_assert!(r.ns < 1e-6 && r.nt < 1e-6, "{r:?}");
        prop_assert!(r.max_defect < 1e-7);
    }
}

#[test]
fn invariant_structure_sign_is_seed_independent() {
    let h = heisenberg(1);
    let base = [0.0; 3];
    let js: Vec<Mat> = [3u64, 7, 11]
        .iter()
        .map(|&seed| {
            let loops = generate_loops(&h, &base, 24, seed).unwrap();
            let alg = estimate_algebra(&h, &base, &loops, &HolonomyOptions::default()).unwrap();
            invariant_complex_structure(&alg, None).unwrap().matrices()[0].clone()
        })
        .collect();
    for j in &js[1..] {
        assert!((j - &js[0]).amax() < 1e-8, "{j} vs {}", js[0]);
    }
    let last_col = js[0].column(3).iter().copied().find(|v| v.abs() > 1e-8).unwrap();
    assert!(last_col > 0.0);
}
