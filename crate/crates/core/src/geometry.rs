//! Levi-Civita geometry of a chart: metric, Christoffel symbols, curvature,
//! geodesics and parallel transport.

use nalgebra::{Cholesky, Dyn, SymmetricEigen};

use crate::curve::CurvePath;
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::linalg::{gram_schmidt, Mat};
use crate::manifold::ManifoldSpec;
use crate::ode::Rk4;
use crate::transport::{self, Connection, CurvatureForms};

/// Relative central-difference step for metric derivatives.
pub const DIFF_STEP: f64 = 1e-5;

pub fn eval_metric(spec: &ManifoldSpec, x: &[f64]) -> Result<Mat> {
    spec.check_point(x)?;
    let g = spec.metric_at(x);
    check_spd(&g, x)?;
    Ok(g)
}

fn check_spd(g: &Mat, x: &[f64]) -> Result<()> {
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("metric at {x:?}")));
    }
    if Cholesky::new(g.clone()).is_none() {
        let min = SymmetricEigen::new(g.clone()).eigenvalues.min();
        return Err(Error::NotPositiveDefinite { point: x.to_vec(), min_eigenvalue: min });
    }
    Ok(())
}

fn inverse_spd(g: &Mat, x: &[f64]) -> Result<Mat> {
    let chol = Cholesky::<f64, Dyn>::new(g.clone()).ok_or_else(|| {
        let min = SymmetricEigen::new(g.clone()).eigenvalues.min();
        Error::NotPositiveDefinite { point: x.to_vec(), min_eigenvalue: min }
    })?;
    let diag_min = (0..g.nrows()).map(|i| chol.l_dirty()[(i, i)]).fold(f64::INFINITY, f64::min);
    let diag_max = (0..g.nrows()).map(|i| chol.l_dirty()[(i, i)]).fold(0.0, f64::max);
    if diag_min < 1e-7 * diag_max {
        return Err(Error::SingularMetric { point: x.to_vec() });
    }
    Ok(chol.inverse())
}

pub(crate) fn step_for(h_rel: f64, xi: f64) -> f64 {
    h_rel * xi.abs().max(1.0)
}

/// Christoffel symbols Γ^k_ij at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct Christoffel {
    n: usize,
    data: Vec<f64>,
}

impl Christoffel {
    pub fn zeros(n: usize) -> Self {
        Christoffel { n, data: vec![0.0; n * n * n] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        self.data[(k * self.n + i) * self.n + j]
    }

    #[inline]
    fn set(&mut self, k: usize, i: usize, j: usize, v: f64) {
        self.data[(k * self.n + i) * self.n + j] = v;
    }

    /// Connection matrix Γ_i with (Γ_i)^k_j = Γ^k_ij.
    pub fn form(&self, i: usize) -> Mat {
        Mat::from_fn(self.n, self.n, |k, j| self.get(k, i, j))
    }

    /// Σ_i v^i Γ_i.
    pub fn contract(&self, v: &[f64]) -> Mat {
        let n = self.n;
        Mat::from_fn(n, n, |k, j| (0..n).map(|i| v[i] * self.get(k, i, j)).sum())
    }

    /// Γ^k_ij u^i w^j.
    pub fn apply(&self, u: &[f64], w: &[f64]) -> Vec<f64> {
        let n = self.n;
        (0..n)
            .map(|k| {
                let mut acc = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        acc += self.get(k, i, j) * u[i] * w[j];
                    }
                }
                acc
            })
            .collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Metric and its first partial derivatives by central differences; the
/// stencil must stay inside the chart domain.
pub fn metric_jet(spec: &ManifoldSpec, x: &[f64], h_rel: f64) -> Result<(Mat, Vec<Mat>)> {
    spec.check_point(x)?;
    let n = spec.dim;
    let g = spec.metric_at(x);
    let mut dg = Vec::with_capacity(n);
    let mut p = x.to_vec();
    for l in 0..n {
        let h = step_for(h_rel, x[l]);
        p[l] = x[l] + h;
        if !spec.contains(&p) {
            return Err(Error::DomainViolation { point: p });
        }
        let plus = spec.metric_at(&p);
        p[l] = x[l] - h;
        if !spec.contains(&p) {
            return Err(Error::DomainViolation { point: p });
        }
        let minus = spec.metric_at(&p);
        p[l] = x[l];
        dg.push((plus - minus) / (2.0 * h));
    }
    Ok((g, dg))
}

fn christoffel_from_jet(g: &Mat, dg: &[Mat], x: &[f64]) -> Result<Christoffel> {
    let n = g.nrows();
    let ginv = inverse_spd(g, x)?;
    let mut lowered = vec![0.0; n * n * n];
    for l in 0..n {
        for i in 0..n {
            for j in i..n {
                let v = 0.5 * (dg[i][(j, l)] + dg[j][(i, l)] - dg[l][(i, j)]);
                lowered[(l * n + i) * n + j] = v;
                lowered[(l * n + j) * n + i] = v;
            }
        }
    }
    let mut gamma = Christoffel::zeros(n);
    for k in 0..n {
        for i in 0..n {
            for j in i..n {
                let v: f64 = (0..n).map(|l| ginv[(k, l)] * lowered[(l * n + i) * n + j]).sum();
                gamma.set(k, i, j, v);
                gamma.set(k, j, i, v);
            }
        }
    }
    Ok(gamma)
}

pub fn christoffel(spec: &ManifoldSpec, x: &[f64]) -> Result<Christoffel> {
    christoffel_with_step(spec, x, DIFF_STEP)
}

pub fn christoffel_with_step(spec: &ManifoldSpec, x: &[f64], h_rel: f64) -> Result<Christoffel> {
    let (g, dg) = metric_jet(spec, x, h_rel)?;
    christoffel_from_jet(&g, &dg, x)
}

/// Metric together with Christoffel symbols, sharing one stencil.
pub fn metric_and_christoffel(spec: &ManifoldSpec, x: &[f64]) -> Result<(Mat, Christoffel)> {
    let (g, dg) = metric_jet(spec, x, DIFF_STEP)?;
    let gamma = christoffel_from_jet(&g, &dg, x)?;
    Ok((g, gamma))
}

/// Gram–Schmidt of the coordinate frame in coordinate order, as columns.
pub fn orthonormal_frame(spec: &ManifoldSpec, x: &[f64]) -> Result<Mat> {
    let g = eval_metric(spec, x)?;
    let n = spec.dim;
    gram_schmidt(&Mat::identity(n, n), &g).ok_or(Error::SingularMetric { point: x.to_vec() })
}

/// Vector field given by coordinate-component expressions, with its
/// symbolic Jacobian.
#[derive(Clone, Debug)]
pub struct VectorField {
    pub components: Vec<Expr>,
    jacobian: Vec<Vec<Expr>>,
}

impl VectorField {
    pub fn new(components: Vec<Expr>) -> Self {
        let n = components.len();
        let jacobian = components.iter().map(|c| (0..n).map(|i| c.diff(i)).collect()).collect();
        VectorField { components, jacobian }
    }

    pub fn constant(v: &[f64]) -> Self {
        VectorField::new(v.iter().map(|&c| Expr::num(c)).collect())
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.components.iter().map(|c| c.eval(x)).collect()
    }

    /// Matrix with entry (k, i) = ∂_i W^k.
    pub fn jacobian(&self, x: &[f64]) -> Mat {
        let n = self.dim();
        Mat::from_fn(n, n, |k, i| self.jacobian[k][i].eval(x))
    }

    /// Directional derivative V(W^k) along `v`.
    pub fn directional(&self, x: &[f64], v: &[f64]) -> Vec<f64> {
        let jac = self.jacobian(x);
        (0..self.dim()).map(|k| (0..self.dim()).map(|i| jac[(k, i)] * v[i]).sum()).collect()
    }
}

/// Frame fields of a spec as vector fields.
pub fn frame_fields(spec: &ManifoldSpec) -> Option<Vec<VectorField>> {
    spec.frame.as_ref().map(|f| f.iter().map(|c| VectorField::new(c.clone())).collect())
}

fn check_field_dims(spec: &ManifoldSpec, fields: &[&VectorField]) -> Result<()> {
    if fields.iter().any(|f| f.dim() != spec.dim) {
        return Err(Error::InvalidArgument("vector field dimension differs from manifold".into()));
    }
    Ok(())
}

/// (∇_V W)(x) = V(W^k) + Γ^k_ij V^i W^j.
pub fn covariant_derivative_field(
    spec: &ManifoldSpec,
    v: &VectorField,
    w: &VectorField,
    x: &[f64],
) -> Result<Vec<f64>> {
    check_field_dims(spec, &[v, w])?;
    let gamma = christoffel(spec, x)?;
    let vx = v.eval(x);
    let wx = w.eval(x);
    let mut out = w.directional(x, &vx);
    for (o, c) in out.iter_mut().zip(gamma.apply(&vx, &wx)) {
        *o += c;
    }
    if out.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite(format!("covariant derivative at {x:?}")));
    }
    Ok(out)
}

/// Levi-Civita connection of a chart, fibre = tangent bundle.
#[derive(Clone, Copy, Debug)]
pub struct LeviCivita<'a> {
    pub spec: &'a ManifoldSpec,
}

impl Connection for LeviCivita<'_> {
    fn base(&self) -> &ManifoldSpec {
        self.spec
    }

    fn rank(&self) -> usize {
        self.spec.dim
    }

    fn form_along(&self, x: &[f64], v: &[f64]) -> Result<Mat> {
        Ok(christoffel(self.spec, x)?.contract(v))
    }

    fn forms(&self, x: &[f64]) -> Result<Vec<Mat>> {
        let gamma = christoffel(self.spec, x)?;
        Ok((0..self.spec.dim).map(|i| gamma.form(i)).collect())
    }

    fn fiber_gram(&self, x: &[f64]) -> Result<Mat> {
        eval_metric(self.spec, x)
    }

    fn fiber_frame(&self, x: &[f64]) -> Result<Mat> {
        orthonormal_frame(self.spec, x)
    }
}

/// Transport of `v0` along `curve` solving v̇ + Γ(ẋ)v = 0.
pub fn levi_civita_transport(spec: &ManifoldSpec, curve: &CurvePath, v0: &[f64]) -> Result<Vec<f64>> {
    if v0.len() != spec.dim {
        return Err(Error::InvalidArgument("tangent vector has wrong length".into()));
    }
    let m = levi_civita_transport_matrix(spec, curve)?;
    Ok((0..spec.dim).map(|k| (0..spec.dim).map(|j| m[(k, j)] * v0[j]).sum()).collect())
}

/// Transport operator in coordinate bases at the two endpoints.
pub fn levi_civita_transport_matrix(spec: &ManifoldSpec, curve: &CurvePath) -> Result<Mat> {
    transport::integrate(&LeviCivita { spec }, curve)
}

/// Linear map on a fibre attached to a point and a tangent plane.
#[derive(Clone, Debug)]
pub struct CurvatureEndomorphism {
    pub base: Vec<f64>,
    pub plane: (Vec<f64>, Vec<f64>),
    /// Matrix in the coordinate basis of the fibre.
    pub matrix: Mat,
    /// Fibre metric in the same basis.
    pub gram: Mat,
}

impl CurvatureEndomorphism {
    /// ‖G M + Mᵀ G‖ relative to max(1, ‖M‖).
    pub fn skew_defect(&self) -> f64 {
        let gm = &self.gram * &self.matrix;
        (&gm + gm.transpose()).amax() / self.matrix.amax().max(1.0)
    }

    /// The same map in the orthonormal fibre frame `frame`.
    pub fn in_frame(&self, frame: &Mat) -> Mat {
        let inv = frame.clone().try_inverse().expect("frame is invertible");
        inv * &self.matrix * frame
    }
}

pub const CURVATURE_STEP: f64 = 1e-2;

/// Riemann tensor R(∂_i, ∂_j) as matrices (R_ij)^k_l, from a sixth-order
/// stencil on the Christoffel forms.
pub fn riemann_tensor(spec: &ManifoldSpec, x: &[f64]) -> Result<CurvatureForms> {
    transport::curvature_forms(&LeviCivita { spec }, x, CURVATURE_STEP)
}

pub fn riemann_endomorphism(
    spec: &ManifoldSpec,
    x: &[f64],
    xv: &[f64],
    yv: &[f64],
) -> Result<CurvatureEndomorphism> {
    if xv.len() != spec.dim || yv.len() != spec.dim {
        return Err(Error::InvalidArgument("plane vectors have wrong length".into()));
    }
    let r = riemann_tensor(spec, x)?;
    Ok(CurvatureEndomorphism {
        base: x.to_vec(),
        plane: (xv.to_vec(), yv.to_vec()),
        matrix: r.apply(xv, yv),
        gram: eval_metric(spec, x)?,
    })
}

/// Ricci tensor Ric(E_a, E_b) = Σ_c g(R(E_c, E_a)E_b, E_c) in an orthonormal
/// frame. Without `frame`, the manifold's declared frame is used, falling back to
/// Gram–Schmidt.
pub fn ricci(spec: &ManifoldSpec, x: &[f64], frame: Option<&Mat>) -> Result<Mat> {
    let g = eval_metric(spec, x)?;
    let n = spec.dim;
    let e = match frame {
        Some(f) => f.clone(),
        None => match spec.frame_at(x) {
            Some(f) => f,
            None => orthonormal_frame(spec, x)?,
        },
    };
    if e.nrows() != n || e.ncols() != n {
        return Err(Error::InvalidArgument(format!("frame must be {n}x{n}")));
    }
    let defect = (e.transpose() * &g * &e - Mat::identity(n, n)).amax();
    if !(defect <= 1e-8) {
        return Err(Error::FrameNotOrthonormal { defect });
    }
    let r = riemann_tensor(spec, x)?;
    let cols: Vec<Vec<f64>> = (0..n).map(|a| e.column(a).iter().copied().collect()).collect();
    let mut ric = Mat::zeros(n, n);
    for c in 0..n {
        let ge_c = &g * e.column(c);
        for a in 0..n {
            let rca = r.apply(&cols[c], &cols[a]);
            let row = ge_c.transpose() * &rca;
            for b in 0..n {
                ric[(a, b)] += (&row * e.column(b))[(0, 0)];
            }
        }
    }
    Ok(ric)
}

/// Geodesic through (x, v) integrated to time `t_end` with `steps` RK4 steps.
/// Returns the final position and velocity.
pub fn geodesic(
    spec: &ManifoldSpec,
    x: &[f64],
    v: &[f64],
    t_end: f64,
    steps: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let traj = geodesic_trajectory(spec, x, v, t_end, steps)?;
    let last = traj.last().expect("trajectory has the initial state");
    Ok((last.0.clone(), last.1.clone()))
}

/// All states (position, velocity) on the integration grid.
pub fn geodesic_trajectory(
    spec: &ManifoldSpec,
    x: &[f64],
    v: &[f64],
    t_end: f64,
    steps: usize,
) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    if steps == 0 {
        return Err(Error::StepUnderflow);
    }
    let n = spec.dim;
    if v.len() != n {
        return Err(Error::InvalidArgument("velocity has wrong length".into()));
    }
    spec.check_point(x)?;
    let mut y: Vec<f64> = x.iter().chain(v).copied().collect();
    let mut rk = Rk4::new();
    let h = t_end / steps as f64;
    let mut out = Vec::with_capacity(steps + 1);
    out.push((x.to_vec(), v.to_vec()));
    let mut rhs = |_t: f64, y: &[f64], dy: &mut [f64]| -> Result<()> {
        let (pos, vel) = y.split_at(n);
        let gamma = christoffel(spec, pos)?;
        let acc = gamma.apply(vel, vel);
        dy[..n].copy_from_slice(vel);
        for k in 0..n {
            dy[n + k] = -acc[k];
        }
        Ok(())
    };
    for s in 0..steps {
        rk.step(&mut rhs, s as f64 * h, h, &mut y)?;
        spec.check_point(&y[..n])?;
        out.push((y[..n].to_vec(), y[n..].to_vec()));
    }
    Ok(out)
}

/// Stereographic chart from the north pole of the sphere of `radius` in
/// ℝ^{n+1}: chart point u to the embedded point.
pub fn stereographic_to_sphere(u: &[f64], radius: f64) -> Vec<f64> {
    let r2: f64 = u.iter().map(|c| c * c).sum();
    let mut p: Vec<f64> = u.iter().map(|c| radius * 2.0 * c / (1.0 + r2)).collect();
    p.push(radius * (r2 - 1.0) / (r2 + 1.0));
    p
}

pub fn sphere_to_stereographic(p: &[f64], radius: f64) -> Vec<f64> {
    let n = p.len() - 1;
    let denom = 1.0 - p[n] / radius;
    p[..n].iter().map(|c| c / radius / denom).collect()
}

/// Differential of the embedding at u: columns are the images of ∂_i.
pub fn stereographic_differential(u: &[f64], radius: f64) -> Mat {
    let n = u.len();
    let r2: f64 = u.iter().map(|c| c * c).sum();
    let d = 1.0 + r2;
    Mat::from_fn(n + 1, n, |a, i| {
        if a < n {
            let delta = if a == i { 1.0 } else { 0.0 };
            radius * (2.0 * delta / d - 4.0 * u[a] * u[i] / (d * d))
        } else {
            radius * 4.0 * u[i] / (d * d)
        }
    })
}

/// Chart components of an embedded tangent vector `w` at chart point u:
/// ((1+|u|²)/2)(w' + u·w_{n+1}) on the unit sphere, scaled by 1/radius.
pub fn stereographic_pushforward(u: &[f64], w: &[f64], radius: f64) -> Vec<f64> {
    let n = u.len();
    let r2: f64 = u.iter().map(|c| c * c).sum();
    (0..n).map(|i| 0.5 * (1.0 + r2) * (w[i] + u[i] * w[n]) / radius).collect()
}
