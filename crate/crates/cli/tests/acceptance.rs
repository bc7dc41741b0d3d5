//! End-to-end acceptance suite. Every criterion prints one PASS/FAIL line;
//! the test fails if any criterion fails.
//!
//! Run with `cargo test -p rollhol-cli --test acceptance -- --nocapture`.

use std::path::PathBuf;
use std::time::Instant;

use clap::Parser;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rollhol::connections::{rolling_curvature, rolling_transport, FiberMetric};
use rollhol::curve::Segment;
use rollhol::geometry::{eval_metric, frame_fields, geodesic, ricci};
use rollhol::holonomy::{commutant_skew, estimate_algebra, generate_loops, HolonomyOptions};
use rollhol::linalg::{expm, observed_order};
use rollhol::manifold::{euclidean, heisenberg, sphere};
use rollhol::rolling::{develop, RollingState};
use rollhol::structures::{extract_sasaki, invariant_complex_structure, jr_lattice, verify_sasaki, DEFAULT_LATTICE_STEP};
use rollhol::{CurvePath, Mat, Report, Vector};
use rollhol_cli::{execute, Cli};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn cli(args: &[&str]) -> Report {
    let parsed = Cli::try_parse_from(std::iter::once("rollhol").chain(args.iter().copied())).expect("argv parses");
    execute(&parsed).unwrap_or_else(|e| panic!("{args:?}: {e:?}"))
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn temp_file(name: &str, body: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("rollhol-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

fn heisenberg_classification() -> Outcome {
    let start = Instant::now();
    let rep = cli(&["holonomy", "heisenberg:m=1"]);
    let secs = start.elapsed().as_secs_f64();
    let h = rep.holonomy.as_ref().unwrap();
    let gap = h.gap.unwrap_or(0.0);
    check(
        h.algebra_dim == 4
            && h.commutant_skew_dim == 1
            && h.label == "U(2)"
            && !h.controllable
            && gap >= 1e3
            && secs < 60.0,
        format!(
            "dim {} commutant {} label {} controllable {} gap {gap:.3e} in {secs:.2}s",
            h.algebra_dim, h.commutant_skew_dim, h.label, h.controllable
        ),
    )
}

fn heisenberg_ricci() -> Outcome {
    let h = heisenberg(1);
    let fields = frame_fields(&h).unwrap();
    let want = Mat::from_diagonal(&Vector::from_vec(vec![-2.0, -2.0, 2.0]));
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let x = h.sample_point(&mut rng);
        let cols: Vec<Vector> = fields.iter().map(|f| Vector::from_vec(f.eval(&x))).collect();
        let frame = Mat::from_columns(&cols);
        let ric = ricci(&h, &x, Some(&frame)).unwrap();
        worst = worst.max((ric - &want).amax());
    }
    check(worst < 1e-6, format!("max |Ric - diag(-2,-2,2)| = {worst:.2e} over 100 points"))
}

fn flat_sphere() -> Outcome {
    let s = sphere(3, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let x = s.sample_point(&mut rng);
        let xv: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let yv: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f = rolling_curvature(&s, FiberMetric::SPHERE, &x, &xv, &yv).unwrap();
        worst = worst.max(f.matrix.norm());
    }
    let rep = cli(&["classify", "sphere:3:radius=1"]);
    let h = rep.holonomy.as_ref().unwrap();
    check(
        worst < 1e-7 && h.algebra_dim == 0 && h.label == "TRIVIAL" && !h.controllable,
        format!("max |F| = {worst:.2e} over 200 samples, dim {} label {}", h.algebra_dim, h.label),
    )
}

fn controllable_plane() -> Outcome {
    let rep = cli(&["holonomy", "euclidean:2"]);
    let h = rep.holonomy.as_ref().unwrap();
    check(
        h.algebra_dim == 3 && h.label == "SO(3)" && h.controllable,
        format!("dim {} label {} controllable {}", h.algebra_dim, h.label, h.controllable),
    )
}

fn cone_isomorphism() -> Outcome {
    let rep = cli(&["cone", "verify", "heisenberg:m=1", "--s0", "0.5,1,3", "--loops", "100"]);
    let cone = rep.cone.as_ref().unwrap();
    let ok = cone.entries.len() == 3 && cone.entries.iter().all(|e| e.max_residual < 1e-5 && e.shrink >= 8.0);
    let detail: Vec<String> = cone
        .entries
        .iter()
        .map(|e| format!("s0={} max {:.2e} shrink {:.1}", e.s0, e.max_residual, e.shrink))
        .collect();
    check(ok, detail.join("; "))
}

fn sasaki_extraction() -> Outcome {
    let h = heisenberg(1);
    let base = [0.0; 3];
    let loops = generate_loops(&h, &base, 64, 7).unwrap();
    let alg = estimate_algebra(&h, &base, &loops, &HolonomyOptions::default()).unwrap();
    if commutant_skew(&alg).len() != 1 {
        return Err("commutant is not one-dimensional".into());
    }
    let structure = invariant_complex_structure(&alg, None).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut centers = vec![base.to_vec()];
    centers.extend((0..8).map(|_| h.sample_point(&mut rng)));
    let lattice = jr_lattice(&h, &structure.matrices(), &base, &centers, DEFAULT_LATTICE_STEP, 512).unwrap();
    let st = extract_sasaki(&h, &lattice, 0).unwrap();
    let frames = frame_fields(&h).unwrap();
    // Global sign fixed by Z at the base.
    let sign = st.sites[0].center.z[2].signum();
    let mut table = 0.0f64;
    for site in &st.sites {
        let p = &site.center.point;
        let (xf, yf, zf) = (frames[0].eval(p), frames[1].eval(p), frames[2].eval(p));
        let j = &site.center.j * sign;
        let jx = &j * Vector::from_vec(xf.clone());
        let jy = &j * Vector::from_vec(yf.clone());
        let jz = &j * Vector::from_vec(zf.clone());
        for k in 0..3 {
            table = table
                .max((jx[k] + yf[k]).abs())
                .max((jy[k] - xf[k]).abs())
                .max(jz[k].abs())
                .max((sign * site.center.z[k] - zf[k]).abs());
        }
    }
    let r = verify_sasaki(&h, &st).unwrap();
    let identities = [r.j_minus_nabla_z, r.nabla_j, r.killing, r.alpha_z, r.d_alpha, r.curvature];
    let worst = identities.iter().copied().fold(0.0, f64::max);
    check(
        table < 1e-5 && worst < 1e-4,
        format!("J table {table:.2e}, identities max {worst:.2e} over {} sites", st.sites.len()),
    )
}

fn converse_construction() -> Outcome {
    let rep = cli(&["sasaki", "verify", "heisenberg:m=1", "--loops", "50"]);
    let conv = rep.sasaki.as_ref().unwrap().converse.as_ref().unwrap();
    check(
        conv.loops == 50 && conv.loop_commutator < 1e-5,
        format!("|[P, J^R]| = {:.2e} over {} loops", conv.loop_commutator, conv.loops),
    )
}

fn three_sasaki() -> Outcome {
    let ext = cli(&["sasaki", "extract", "sphere:7:radius=1", "--centers", "8"]);
    let r = ext.sasaki.as_ref().unwrap().three_sasaki.as_ref().unwrap();
    let extracted = [r.z_orthonormal, r.bracket, r.j_z, r.epsilon].into_iter().fold(0.0, f64::max);
    let rep = cli(&["sasaki", "verify", "sphere:7:radius=1", "--loops", "16"]);
    let built = rep.sasaki.as_ref().unwrap().triple.as_ref().unwrap().max_relation();
    check(
        extracted < 1e-5 && built < 1e-5,
        format!(
            "extracted: Z orthonormal {:.1e} bracket {:.1e} JiZj {:.1e} JiJj {:.1e}; constructed max {built:.1e}",
            r.z_orthonormal, r.bracket, r.j_z, r.epsilon
        ),
    )
}

fn kinematic_crosscheck() -> Outcome {
    let square =
        temp_file("square.json", r#"{"segments":[{"polyline":[[0,0],[0.3,0],[0.3,0.3],[0,0.3],[0,0]]}],"is_loop":true}"#);
    let flat = cli(&["roll", "crosscheck", "euclidean:2", "--loop", square.to_str().unwrap()]);
    let flat_res = flat.rolling.as_ref().unwrap().crosscheck.as_ref().unwrap().residual;
    let round = temp_file(
        "round.json",
        r#"{"segments":[{"coords":["0.1+0.3*sin(2*pi*t)","-0.2+0.2*(cos(2*pi*t)-1)+0.1*sin(4*pi*t)","0.25*sin(2*pi*t)*cos(2*pi*t)"]}],"is_loop":true}"#,
    );
    let sph = cli(&["roll", "crosscheck", "sphere:3:radius=1", "--loop", round.to_str().unwrap()]);
    let sph_res = sph.rolling.as_ref().unwrap().crosscheck.as_ref().unwrap().residual;
    let e = euclidean(2);
    let q0 = RollingState::standard(&[0.0, 0.0]);
    let line = CurvePath::new(
        vec![Segment::Linear { from: vec![0.0, 0.0], to: vec![2.0 * std::f64::consts::PI, 0.0] }],
        false,
    )
    .unwrap();
    let traj = develop(&e, &line, &q0).unwrap();
    let ret = (traj.last().configuration() - q0.configuration()).amax();
    check(
        flat_res < 1e-4 && sph_res < 1e-6 && ret < 1e-5,
        format!("plane square {flat_res:.2e}, sphere loop {sph_res:.2e}, 2π return {ret:.2e}"),
    )
}

fn numerical_orders() -> Outcome {
    let h = heisenberg(1);
    let steps = [8usize, 16, 32];
    let hs: Vec<f64> = steps.iter().map(|&k| 1.0 / k as f64).collect();

    let wiggle = Segment::Trig {
        center: vec![0.1, -0.2, 0.3],
        sin: vec![vec![0.3, 0.2, -0.25]],
        cos: vec![vec![-0.15, 0.25, 0.2]],
    };
    let metricity: Vec<f64> = steps
        .iter()
        .map(|&k| {
            let c = CurvePath::new(vec![wiggle.clone()], true).unwrap().with_steps(k);
            rolling_transport(&h, FiberMetric::SPHERE, &c).unwrap().metric_defect()
        })
        .collect();
    let p_metric = observed_order(&hs, &metricity);

    let x = [0.3, -0.2, 0.1];
    let f = rolling_curvature(&h, FiberMetric::SPHERE, &x, &[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]).unwrap();
    let deltas = [0.1, 0.05, 0.025];
    let law: Vec<f64> = deltas
        .iter()
        .map(|&d| {
            let p = rolling_transport(&h, FiberMetric::SPHERE, &CurvePath::centered_square(&x, 0, 1, d)).unwrap();
            (&p.coordinate_matrix - expm(&(&f.matrix * (-d * d)))).amax()
        })
        .collect();
    let p_law = observed_order(&deltas, &law);

    let v0 = [0.8, -0.5, 0.6];
    let speed = |x: &[f64], v: &[f64]| {
        let g = eval_metric(&h, x).unwrap();
        let v = Vector::from_column_slice(v);
        (v.transpose() * g * &v)[(0, 0)]
    };
    let s0 = speed(&x, &v0);
    let drift: Vec<f64> = steps
        .iter()
        .map(|&k| {
            let (x1, v1) = geodesic(&h, &x, &v0, 1.0, k).unwrap();
            (speed(&x1, &v1) - s0).abs()
        })
        .collect();
    let p_speed = observed_order(&hs, &drift);

    check(
        p_metric >= 3.0 && p_law >= 3.0 && p_speed >= 3.0,
        format!("orders: metricity {p_metric:.2}, small-loop law {p_law:.2}, geodesic speed {p_speed:.2}"),
    )
}

#[test]
fn acceptance_criteria() {
    let criteria: [Criterion; 10] = [
        ("heisenberg classification", heisenberg_classification),
        ("heisenberg ricci", heisenberg_ricci),
        ("flat case on the unit 3-sphere", flat_sphere),
        ("controllable plane", controllable_plane),
        ("cone isomorphism", cone_isomorphism),
        ("sasakian extraction", sasaki_extraction),
        ("converse construction", converse_construction),
        ("3-sasakian identities", three_sasaki),
        ("kinematic crosscheck", kinematic_crosscheck),
        ("numerical orders", numerical_orders),
    ];
    let mut failed = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                println!("FAIL {:>2} {name}: {detail}", i + 1);
                failed.push(i + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
