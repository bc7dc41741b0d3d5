//! Kinematic rolling of M on the unit sphere Sⁿ ⊂ ℝⁿ⁺¹ without slipping or
//! twisting.
//!
//! A state stores the contact point x on M, the contact point x̂ on Sⁿ and
//! the images A E_a of the orthonormal frame of T_xM. With A in coordinate
//! form the constraints become
//!
//! ```text
//! x̂' = A ẋ,        A' = A Γ(ẋ) - x̂ (x̂')ᵀ A,
//! ```
//!
//! the second equation making A carry M-parallel fields to sphere-parallel
//! ones.

use serde::Serialize;

use crate::connections::{rolling_transport, FiberMetric};
use crate::curve::CurvePath;
use crate::error::{Error, Result};
use crate::geometry::{christoffel, eval_metric, orthonormal_frame};
use crate::linalg::{gram_schmidt, Mat, Vector};
use crate::manifold::ManifoldSpec;
use crate::ode::Rk4;

/// Orthonormality defect above which the state is re-orthonormalized.
pub const REORTHONORMALIZE_AT: f64 = 1e-9;
/// Defect treated as a failure of the integration.
pub const DRIFT_LIMIT: f64 = 1e-5;
/// NT residual above which a trajectory is flagged.
pub const FLAG_THRESHOLD: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct RollingState {
    pub x: Vec<f64>,
    pub xhat: Vec<f64>,
    /// (n+1) × n; column a is A applied to the a-th orthonormal frame vector.
    pub frame: Mat,
}

impl RollingState {
    pub fn new(x: Vec<f64>, xhat: Vec<f64>, frame: Mat) -> Result<RollingState> {
        let n = x.len();
        if xhat.len() != n + 1 || frame.nrows() != n + 1 || frame.ncols() != n {
            return Err(Error::InvalidArgument(format!("rolling state over a {n}-manifold needs x̂ in R^{}", n + 1)));
        }
        let s = RollingState { x, xhat, frame };
        let norm = Vector::from_column_slice(&s.xhat).norm();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("|x̂| = {norm}")));
        }
        let d = s.defect();
        if d > 1e-8 {
            return Err(Error::InvalidArgument(format!("frame is not orthonormal and tangent (defect {d:e})")));
        }
        Ok(s)
    }

    /// x̂ = e_{n+1}, A E_a = e_a.
    pub fn standard(x: &[f64]) -> RollingState {
        let n = x.len();
        let mut xhat = vec![0.0; n + 1];
        xhat[n] = 1.0;
        RollingState { x: x.to_vec(), xhat, frame: Mat::identity(n + 1, n) }
    }

    /// [A E | x̂] ∈ O(n+1).
    pub fn configuration(&self) -> Mat {
        let n = self.x.len();
        let mut f = Mat::zeros(n + 1, n + 1);
        f.view_mut((0, 0), (n + 1, n)).copy_from(&self.frame);
        for a in 0..=n {
            f[(a, n)] = self.xhat[a];
        }
        f
    }

    pub fn defect(&self) -> f64 {
        let f = self.configuration();
        let n = f.nrows();
        (f.transpose() * &f - Mat::identity(n, n)).amax()
    }

    /// Applies a fixed rotation of ℝ^{n+1} to the sphere data.
    pub fn rotated(&self, q: &Mat) -> RollingState {
        let xhat = q * Vector::from_column_slice(&self.xhat);
        RollingState { x: self.x.clone(), xhat: xhat.as_slice().to_vec(), frame: q * &self.frame }
    }
}

#[derive(Clone, Debug)]
pub struct TrajectoryNode {
    pub time: f64,
    pub state: RollingState,
    /// ẋ from the curve.
    pub velocity: Vec<f64>,
    /// Coordinates of an M-parallel test field.
    pub test_field: Vec<f64>,
    /// A in coordinate form, (n+1) × n.
    pub a_coord: Mat,
    pub ns: f64,
    pub nt: f64,
}

#[derive(Clone, Debug)]
pub struct RollingTrajectory {
    /// Nodes per segment, endpoints included (joints appear twice).
    pub segments: Vec<Vec<TrajectoryNode>>,
    pub steps_per_segment: usize,
    pub reorthonormalizations: usize,
    pub max_defect: f64,
}

impl RollingTrajectory {
    pub fn first(&self) -> &RollingState {
        &self.segments[0][0].state
    }

    pub fn last(&self) -> &RollingState {
        &self.segments.last().and_then(|s| s.last()).expect("trajectory has nodes").state
    }

    /// Nodes in time order with duplicated joints removed.
    pub fn nodes(&self) -> impl Iterator<Item = &TrajectoryNode> {
        self.segments
            .iter()
            .enumerate()
            .flat_map(|(k, seg)| seg.iter().skip(if k == 0 { 0 } else { 1 }))
    }

    /// JSON export: one record per node.
    pub fn records(&self) -> Vec<StateRecord> {
        self.nodes()
            .map(|nd| StateRecord {
                time: nd.time,
                x: nd.state.x.clone(),
                xhat: nd.state.xhat.clone(),
                frame: nd.state.frame.column_iter().map(|c| c.iter().copied().collect()).collect(),
                ns_residual: nd.ns,
                nt_residual: nd.nt,
            })
            .collect()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct StateRecord {
    pub time: f64,
    pub x: Vec<f64>,
    pub xhat: Vec<f64>,
    pub frame: Vec<Vec<f64>>,
    pub ns_residual: f64,
    pub nt_residual: f64,
}

fn state_len(n: usize) -> usize {
    (n + 1) + (n + 1) * n + n
}

fn unpack(n: usize, y: &[f64]) -> (Vector, Mat, Vector) {
    let xhat = Vector::from_column_slice(&y[..n + 1]);
    let a = Mat::from_column_slice(n + 1, n, &y[n + 1..(n + 1) * (n + 1)]);
    let v = Vector::from_column_slice(&y[(n + 1) * (n + 1)..]);
    (xhat, a, v)
}

fn pack(xhat: &Vector, a: &Mat, v: &Vector, y: &mut [f64]) {
    let n = a.ncols();
    y[..n + 1].copy_from_slice(xhat.as_slice());
    y[n + 1..(n + 1) * (n + 1)].copy_from_slice(a.as_slice());
    y[(n + 1) * (n + 1)..].copy_from_slice(v.as_slice());
}

/// Re-orthonormalizes [A E | x̂] starting from x̂.
fn reorthonormalize(xhat: &mut Vector, frame: &mut Mat) {
    let n = frame.ncols();
    let mut cols = Mat::zeros(n + 1, n + 1);
    cols.set_column(0, xhat);
    for a in 0..n {
        cols.set_column(a + 1, &frame.column(a));
    }
    let q = gram_schmidt(&cols, &Mat::identity(n + 1, n + 1)).expect("configuration is close to orthonormal");
    *xhat = q.column(0).into_owned();
    for a in 0..n {
        frame.set_column(a, &q.column(a + 1));
    }
}

/// Develops `curve` starting from `q0`, fixed-step RK4 per segment.
pub fn develop(spec: &ManifoldSpec, curve: &CurvePath, q0: &RollingState) -> Result<RollingTrajectory> {
    curve.validate()?;
    let n = spec.dim;
    if curve.dim() != n || q0.x.len() != n {
        return Err(Error::InvalidCurve(format!("curve and state must live on the {n}-dimensional chart")));
    }
    let start = curve.start();
    if start.iter().zip(&q0.x).any(|(a, b)| (a - b).abs() > 1e-12) {
        return Err(Error::InvalidArgument("initial state is not over the curve start".into()));
    }
    if q0.defect() > 1e-8 {
        return Err(Error::InvalidArgument(format!("initial state defect {:e}", q0.defect())));
    }
    let steps = curve.steps_per_segment;
    if steps < 4 {
        return Err(Error::InvalidArgument("development needs at least 4 steps per segment".into()));
    }
    let h = 1.0 / steps as f64;

    let g0 = eval_metric(spec, &start)?;
    let e0 = orthonormal_frame(spec, &start)?;
    let mut y = vec![0.0; state_len(n)];
    pack(
        &Vector::from_column_slice(&q0.xhat),
        &(&q0.frame * e0.transpose() * &g0),
        &e0.column(0).into_owned(),
        &mut y,
    );

    let mut rk = Rk4::new();
    let mut x = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut reorth = 0usize;
    let mut max_defect = 0.0f64;
    let mut segments = Vec::with_capacity(curve.segments.len());

    for (si, seg) in curve.segments.iter().enumerate() {
        let record = |t: f64, y: &[f64], x: &mut [f64], v: &mut [f64]| -> Result<TrajectoryNode> {
            seg.point(t, x);
            seg.velocity(t, v);
            let (xhat, a, tv) = unpack(n, y);
            let e = orthonormal_frame(spec, x)?;
            Ok(TrajectoryNode {
                time: si as f64 + t,
                state: RollingState { x: x.to_vec(), xhat: xhat.as_slice().to_vec(), frame: &a * e },
                velocity: v.to_vec(),
                test_field: tv.as_slice().to_vec(),
                a_coord: a,
                ns: 0.0,
                nt: 0.0,
            })
        };
        let mut nodes = Vec::with_capacity(steps + 1);
        nodes.push(record(0.0, &y, &mut x, &mut v)?);
        let mut rhs = |t: f64, y: &[f64], dy: &mut [f64]| -> Result<()> {
            let mut px = vec![0.0; n];
            let mut pv = vec![0.0; n];
            seg.point(t, &mut px);
            seg.velocity(t, &mut pv);
            if !spec.contains(&px) {
                return Err(Error::DomainViolation { point: px });
            }
            let (xhat, a, tv) = unpack(n, y);
            let gamma = christoffel(spec, &px)?.contract(&pv);
            let xhat_dot = &a * Vector::from_column_slice(&pv);
            let a_dot = &a * &gamma - &xhat * (xhat_dot.transpose() * &a);
            let v_dot = -(&gamma * tv);
            pack(&xhat_dot, &a_dot, &v_dot, dy);
            Ok(())
        };
        for s in 0..steps {
            let t = s as f64 * h;
            rk.step(&mut rhs, t, h, &mut y)?;
            let mut node = record(t + h, &y, &mut x, &mut v)?;
            let d = node.state.defect();
            max_defect = max_defect.max(d);
            if d > DRIFT_LIMIT {
                return Err(Error::InvalidArgument(format!("rolling state drifted by {d:e} at t = {}", node.time)));
            }
            if d > REORTHONORMALIZE_AT {
                reorth += 1;
                let (mut xhat, _, tv) = unpack(n, &y);
                let mut frame = node.state.frame.clone();
                reorthonormalize(&mut xhat, &mut frame);
                let g = eval_metric(spec, &x)?;
                let e = orthonormal_frame(spec, &x)?;
                let a = &frame * e.transpose() * g;
                pack(&xhat, &a, &tv, &mut y);
                node = record(t + h, &y, &mut x, &mut v)?;
            }
            nodes.push(node);
        }
        segments.push(nodes);
    }
    let mut traj = RollingTrajectory { segments, steps_per_segment: steps, reorthonormalizations: reorth, max_defect };
    fill_residuals(&mut traj);
    Ok(traj)
}

/// Five-point first-derivative weights (÷ 12h) at stencil position p.
const WEIGHTS: [[f64; 5]; 5] = [
    [-25.0, 48.0, -36.0, 16.0, -3.0],
    [-3.0, -10.0, 18.0, -6.0, 1.0],
    [1.0, -8.0, 0.0, 8.0, -1.0],
    [-1.0, 6.0, -18.0, 10.0, 3.0],
    [3.0, -16.0, 36.0, -48.0, 25.0],
];

fn derivative(series: &[Vector], k: usize, h: f64) -> Vector {
    let last = series.len() - 1;
    let lo = k.saturating_sub(2).min(last - 4);
    let w = &WEIGHTS[k - lo];
    let mut out = Vector::zeros(series[0].len());
    for (i, wi) in w.iter().enumerate() {
        if *wi != 0.0 {
            out += &series[lo + i] * *wi;
        }
    }
    out / (12.0 * h)
}

fn fill_residuals(traj: &mut RollingTrajectory) {
    let h = 1.0 / traj.steps_per_segment as f64;
    for seg in &mut traj.segments {
        let xhats: Vec<Vector> = seg.iter().map(|nd| Vector::from_column_slice(&nd.state.xhat)).collect();
        let ws: Vec<Vector> = seg.iter().map(|nd| &nd.a_coord * Vector::from_column_slice(&nd.test_field)).collect();
        for k in 0..seg.len() {
            let xhat_dot = derivative(&xhats, k, h);
            let ns = (&xhat_dot - &seg[k].a_coord * Vector::from_column_slice(&seg[k].velocity)).norm();
            let w_dot = derivative(&ws, k, h);
            let normal = xhats[k].dot(&w_dot);
            let nt = (&w_dot - &xhats[k] * normal).norm();
            seg[k].ns = ns;
            seg[k].nt = nt;
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RollingResiduals {
    pub ns: f64,
    pub nt: f64,
    pub max_defect: f64,
    pub reorthonormalizations: usize,
    /// NT residual or state defect beyond [`FLAG_THRESHOLD`].
    pub flagged: bool,
}

/// Recomputes the NS and NT residual series from the stored states.
pub fn rolling_residuals(traj: &RollingTrajectory) -> RollingResiduals {
    let mut t = traj.clone();
    fill_residuals(&mut t);
    let ns = t.nodes().map(|nd| nd.ns).fold(0.0, f64::max);
    let nt = t.nodes().map(|nd| nd.nt).fold(0.0, f64::max);
    let max_defect = t.nodes().map(|nd| nd.state.defect()).fold(0.0, f64::max);
    RollingResiduals {
        ns,
        nt,
        max_defect,
        reorthonormalizations: traj.reorthonormalizations,
        flagged: nt > FLAG_THRESHOLD || max_defect > FLAG_THRESHOLD,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Crosscheck {
    /// ‖ι₀ P ι₀ᵀ - g⁻¹‖_F.
    pub residual: f64,
    pub ns: f64,
    pub nt: f64,
    pub reorthonormalizations: usize,
}

/// Compares the rotation g ∈ SO(n+1) taking the initial contact
/// configuration to the final one with the rolling-connection transport
/// around the same loop, identified through ι₀(X, r) = A₀X + r x̂₀.
pub fn holonomy_crosscheck(spec: &ManifoldSpec, lp: &CurvePath, q0: &RollingState) -> Result<Crosscheck> {
    if !lp.is_loop {
        return Err(Error::InvalidCurve("holonomy cross-check needs a closed loop".into()));
    }
    let traj = develop(spec, lp, q0)?;
    let f0 = traj.first().configuration();
    let f1 = traj.last().configuration();
    let g = &f1 * f0.transpose();
    let p = rolling_transport(spec, FiberMetric::SPHERE, lp)?.matrix;
    let residual = (&f0 * p * f0.transpose() - g.transpose()).norm();
    let r = rolling_residuals(&traj);
    Ok(Crosscheck { residual, ns: r.ns, nt: r.nt, reorthonormalizations: traj.reorthonormalizations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve::Segment;
    use crate::geometry::{stereographic_differential, stereographic_to_sphere};
    use crate::linalg::observed_order;
    use crate::manifold::{euclidean, heisenberg, sphere};

    fn segment(from: &[f64], to: &[f64], steps: usize) -> CurvePath {
        CurvePath::new(vec![Segment::Linear { from: from.to_vec(), to: to.to_vec() }], false)
            .unwrap()
            .with_steps(steps)
    }

    #[test]
    fn plate_ball_full_turn_returns() {
        let e = euclidean(2);
        let q0 = RollingState::standard(&[0.0, 0.0]);
        let traj = develop(&e, &segment(&[0.0, 0.0], &[2.0 * std::f64::consts::PI, 0.0], 512), &q0).unwrap();
        let back = traj.last();
        let d = (back.configuration() - q0.configuration()).amax();
        assert!(d < 1e-5, "{d}");
        // Half-way the contact point is antipodal.
        let mid = &traj.segments[0][256].state;
        assert!((mid.xhat[2] + 1.0).abs() < 1e-8);
    }

    #[test]
    fn plate_ball_angle_equals_length() {
        let e = euclidean(2);
        let traj = develop(&e, &segment(&[0.0, 0.0], &[0.0, 1.3], 256), &RollingState::standard(&[0.0, 0.0])).unwrap();
        let xhat = &traj.last().xhat;
        assert!((xhat[1] - 1.3f64.sin()).abs() < 1e-10 && (xhat[2] - 1.3f64.cos()).abs() < 1e-10);
        assert!(xhat[0].abs() < 1e-12);
    }

    #[test]
    fn sphere_rolls_onto_itself() {
        let s = sphere(2, 1.0);
        let x0 = [0.2, -0.1];
        let dp = stereographic_differential(&x0, 1.0);
        let e0 = orthonormal_frame(&s, &x0).unwrap();
        let q0 = RollingState::new(x0.to_vec(), stereographic_to_sphere(&x0, 1.0), dp * e0).unwrap();
        let curve = CurvePath::polyline(&[x0.to_vec(), vec![0.5, 0.3], vec![-0.4, 0.6]], false).unwrap();
        let traj = develop(&s, &curve, &q0).unwrap();
        for nd in traj.nodes() {
            let want = stereographic_to_sphere(&nd.state.x, 1.0);
            let e = orthonormal_frame(&s, &nd.state.x).unwrap();
            let frame = stereographic_differential(&nd.state.x, 1.0) * e;
            for a in 0..3 {
                assert!((nd.state.xhat[a] - want[a]).abs() < 1e-9);
            }
            // The frame agrees with the embedded frame up to the rotation
            // that parallel transport induces between GS frames.
            let rel = frame.transpose() * &nd.state.frame;
            assert!((rel.transpose() * &rel - Mat::identity(2, 2)).amax() < 1e-9);
        }
    }

    #[test]
    fn constant_curve_is_stationary() {
        let h = heisenberg(1);
        let q0 = RollingState::standard(&[0.1, 0.2, 0.3]);
        let traj = develop(&h, &CurvePath::constant(&[0.1, 0.2, 0.3]).with_steps(16), &q0).unwrap();
        assert_eq!(traj.last(), &traj.first().clone());
        let r = rolling_residuals(&traj);
        assert!(r.ns < 1e-14 && r.nt < 1e-14);
    }

    fn wiggle() -> CurvePath {
        CurvePath::new(
            vec![Segment::Trig {
                center: vec![0.0, 0.0, 0.0],
                sin: vec![vec![0.2, -0.1, 0.15], vec![0.05, 0.1, 0.0]],
                cos: vec![vec![0.15, 0.05, -0.1], vec![0.0, 0.05, 0.1]],
            }],
            true,
        )
        .unwrap()
    }

    #[test]
    fn residuals_are_small_and_converge() {
        let h = heisenberg(1);
        let q0 = RollingState::standard(&[0.0; 3]);
        let r = rolling_residuals(&develop(&h, &wiggle(), &q0).unwrap());
        assert!(r.ns < 1e-6 && r.nt < 1e-6, "{r:?}");
        assert!(!r.flagged);
        assert!(r.reorthonormalizations <= 1 && r.max_defect < 1e-7, "{r:?}");
        let coarse = rolling_residuals(&develop(&h, &wiggle().with_steps(64), &q0).unwrap());
        let fine = rolling_residuals(&develop(&h, &wiggle().with_steps(128), &q0).unwrap());
        assert!(coarse.ns / fine.ns >= 8.0, "{} {}", coarse.ns, fine.ns);
        assert!(coarse.nt / fine.nt >= 8.0, "{} {}", coarse.nt, fine.nt);
    }

    #[test]
    fn perturbed_frame_is_flagged() {
        let h = heisenberg(1);
        let mut traj = develop(&h, &wiggle(), &RollingState::standard(&[0.0; 3])).unwrap();
        for seg in &mut traj.segments {
            for nd in seg.iter_mut() {
                let mut k = Mat::identity(3, 3);
                k[(0, 1)] = 0.05 * (2.0 * std::f64::consts::PI * nd.time).sin();
                nd.a_coord = &nd.a_coord * &k;
                nd.state.frame = &nd.state.frame * &k;
            }
        }
        let r = rolling_residuals(&traj);
        assert!(r.nt > 1e-3 && r.flagged, "{r:?}");
    }

    #[test]
    fn development_is_equivariant() {
        let h = heisenberg(1);
        let q0 = RollingState::standard(&[0.0; 3]);
        let raw = Mat::from_fn(4, 4, |r, c| ((r * 7 + c * 3) as f64).sin());
        let mut q = raw.qr().q();
        if q.determinant() < 0.0 {
            let c0 = -q.column(0).into_owned();
            q.set_column(0, &c0);
        }
        let a = develop(&h, &wiggle(), &q0).unwrap();
        let b = develop(&h, &wiggle(), &q0.rotated(&q)).unwrap();
        for (na, nb) in a.nodes().zip(b.nodes()) {
            let want = na.state.rotated(&q);
            assert!((want.frame - &nb.state.frame).amax() < 1e-8);
            for k in 0..4 {
                assert!((want.xhat[k] - nb.state.xhat[k]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn crosscheck_on_plane_square() {
        let e = euclidean(2);
        let sq = CurvePath::polyline(
            &[vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0], vec![0.0, 0.0]],
            true,
        )
        .unwrap();
        let c = holonomy_crosscheck(&e, &sq, &RollingState::standard(&[0.0, 0.0])).unwrap();
        assert!(c.residual < 1e-4, "{c:?}");
        let errs: Vec<f64> = [32, 64, 128]
            .iter()
            .map(|&s| {
                let lp = CurvePath::new(wiggle().projected(2).segments, true).unwrap().with_steps(s);
                holonomy_crosscheck(&e, &lp, &RollingState::standard(&[0.0, 0.0])).unwrap().residual
            })
            .collect();
        let order = observed_order(&[1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0], &errs);
        assert!(order >= 3.0, "{errs:?} {order}");
    }

    #[test]
    fn crosscheck_on_round_sphere() {
        let s = sphere(3, 1.0);
        let lp = wiggle();
        let x0 = lp.start();
        let e0 = orthonormal_frame(&s, &x0).unwrap();
        let q0 = RollingState::new(x0.clone(), stereographic_to_sphere(&x0, 1.0), stereographic_differential(&x0, 1.0) * e0)
            .unwrap();
        let c = holonomy_crosscheck(&s, &lp, &q0).unwrap();
        assert!(c.residual < 1e-6, "{c:?}");
        // An arbitrary initial contact gives the same residual bound.
        let c = holonomy_crosscheck(&s, &lp, &RollingState::standard(&x0)).unwrap();
        assert!(c.residual < 1e-6, "{c:?}");
    }

    #[test]
    fn crosscheck_rejects_open_curve() {
        let e = euclidean(2);
        let r = holonomy_crosscheck(&e, &segment(&[0.0, 0.0], &[1.0, 0.0], 8), &RollingState::standard(&[0.0, 0.0]));
        assert!(matches!(r, Err(Error::InvalidCurve(_))));
    }

    #[test]
    fn constant_loop_crosscheck_vanishes() {
        let e = euclidean(2);
        let lp = CurvePath::new(CurvePath::constant(&[0.3, 0.1]).segments, true).unwrap().with_steps(8);
        let c = holonomy_crosscheck(&e, &lp, &RollingState::standard(&[0.3, 0.1])).unwrap();
        assert_eq!(c.residual, 0.0);
    }
}
