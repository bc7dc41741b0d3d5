//! The rolling connection on TM ⊕ ℝ, its fibre metric and transport, and the
//! Riemannian cone C(M) with its holonomy isomorphism.

use serde::Serialize;

use crate::curve::CurvePath;
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::geometry::{self, eval_metric, orthonormal_frame, CurvatureEndomorphism, VectorField, CURVATURE_STEP};
use crate::linalg::{operator_norm, Mat};
use crate::manifold::{cone_metric, Interval, ManifoldSpec};
use crate::transport::{self, Connection, CurvatureForms};

/// Curvature parameter of the model space the manifold rolls on.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FiberMetric {
    c: f64,
}

impl FiberMetric {
    pub const SPHERE: FiberMetric = FiberMetric { c: 1.0 };
    pub const HYPERBOLIC: FiberMetric = FiberMetric { c: -1.0 };

    pub fn new(c: f64) -> Result<Self> {
        if c == 1.0 || c == -1.0 {
            Ok(FiberMetric { c })
        } else {
            Err(Error::InvalidArgument(format!("curvature parameter must be +1 or -1, got {c}")))
        }
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    /// diag(1, ..., 1, 1/c): the fibre metric in an orthonormal frame.
    pub fn eta(&self, n: usize) -> Mat {
        let mut eta = Mat::identity(n + 1, n + 1);
        eta[(n, n)] = 1.0 / self.c;
        eta
    }

    /// Fibre metric blockdiag(g, 1/c) in the coordinate fibre basis.
    pub fn gram(&self, g: &Mat) -> Mat {
        let n = g.nrows();
        let mut h = Mat::zeros(n + 1, n + 1);
        h.view_mut((0, 0), (n, n)).copy_from(g);
        h[(n, n)] = 1.0 / self.c;
        h
    }
}

/// Element (X, r) of the fibre of TM ⊕ ℝ over `base`.
#[derive(Clone, Debug, PartialEq)]
pub struct FiberVector {
    pub base: Vec<f64>,
    pub tangent: Vec<f64>,
    pub scalar: f64,
}

impl FiberVector {
    pub fn new(base: &[f64], tangent: &[f64], scalar: f64) -> Self {
        FiberVector { base: base.to_vec(), tangent: tangent.to_vec(), scalar }
    }

    /// Coordinates (X¹, ..., Xⁿ, r).
    pub fn coords(&self) -> Vec<f64> {
        let mut v = self.tangent.clone();
        v.push(self.scalar);
        v
    }
}

/// h_c(u, v) = g(X, Y) + c⁻¹ r s.
pub fn fiber_inner(spec: &ManifoldSpec, metric: FiberMetric, u: &FiberVector, v: &FiberVector) -> Result<f64> {
    if u.base != v.base {
        return Err(Error::InvalidArgument("fibre vectors lie over different points".into()));
    }
    if u.tangent.len() != spec.dim || v.tangent.len() != spec.dim {
        return Err(Error::InvalidArgument("tangent part has wrong length".into()));
    }
    if !u.coords().iter().chain(&v.coords()).all(|c| c.is_finite()) {
        return Err(Error::NonFinite("fibre vector".into()));
    }
    let g = eval_metric(spec, &u.base)?;
    let n = spec.dim;
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            acc += g[(i, j)] * u.tangent[i] * v.tangent[j];
        }
    }
    Ok(acc + u.scalar * v.scalar / metric.c())
}

/// ∇^{R,c}_Y (X, r) = (∇_Y X + r Y, Y(r) - c g(X, Y)).
pub fn rolling_derivative(
    spec: &ManifoldSpec,
    metric: FiberMetric,
    section: (&VectorField, &Expr),
    y: &[f64],
    x: &[f64],
) -> Result<FiberVector> {
    let (field, r) = section;
    let n = spec.dim;
    if field.dim() != n || y.len() != n {
        return Err(Error::InvalidArgument("section or direction has wrong dimension".into()));
    }
    let yf = VectorField::constant(y);
    // ∇_Y X with Y extended as a constant field: only Y(x) enters.
    let nabla = geometry::covariant_derivative_field(spec, &yf, field, x)?;
    let g = eval_metric(spec, x)?;
    let rx = r.eval_checked(x)?;
    let xv = field.eval(x);
    let tangent: Vec<f64> = (0..n).map(|k| nabla[k] + rx * y[k]).collect();
    let dr: f64 = (0..n).map(|i| r.diff(i).eval(x) * y[i]).sum();
    let gxy: f64 = (0..n).map(|i| (0..n).map(|j| g[(i, j)] * xv[i] * y[j]).sum::<f64>()).sum();
    Ok(FiberVector::new(x, &tangent, dr - metric.c() * gxy))
}

/// The rolling connection as connection matrices on the coordinate fibre
/// basis (∂_1, ..., ∂_n, e):
/// (ω_i)^k_j = Γ^k_ij, (ω_i)^k_e = δ^k_i, (ω_i)^e_j = -c g_ij.
#[derive(Clone, Copy, Debug)]
pub struct Rolling<'a> {
    pub spec: &'a ManifoldSpec,
    pub metric: FiberMetric,
}

impl<'a> Rolling<'a> {
    pub fn new(spec: &'a ManifoldSpec, metric: FiberMetric) -> Self {
        Rolling { spec, metric }
    }

    pub fn sphere(spec: &'a ManifoldSpec) -> Self {
        Rolling { spec, metric: FiberMetric::SPHERE }
    }
}

impl Connection for Rolling<'_> {
    fn base(&self) -> &ManifoldSpec {
        self.spec
    }

    fn rank(&self) -> usize {
        self.spec.dim + 1
    }

    fn forms(&self, x: &[f64]) -> Result<Vec<Mat>> {
        let n = self.spec.dim;
        let (g, gamma) = geometry::metric_and_christoffel(self.spec, x)?;
        let c = self.metric.c();
        Ok((0..n)
            .map(|i| {
                let mut w = Mat::zeros(n + 1, n + 1);
                w.view_mut((0, 0), (n, n)).copy_from(&gamma.form(i));
                w[(i, n)] = 1.0;
                for j in 0..n {
                    w[(n, j)] = -c * g[(i, j)];
                }
                w
            })
            .collect())
    }

    fn form_along(&self, x: &[f64], v: &[f64]) -> Result<Mat> {
        let n = self.spec.dim;
        let (g, gamma) = geometry::metric_and_christoffel(self.spec, x)?;
        let c = self.metric.c();
        let mut w = Mat::zeros(n + 1, n + 1);
        w.view_mut((0, 0), (n, n)).copy_from(&gamma.contract(v));
        for k in 0..n {
            w[(k, n)] = v[k];
            w[(n, k)] = -c * (0..n).map(|i| v[i] * g[(i, k)]).sum::<f64>();
        }
        Ok(w)
    }

    fn fiber_gram(&self, x: &[f64]) -> Result<Mat> {
        Ok(self.metric.gram(&eval_metric(self.spec, x)?))
    }

    fn fiber_frame(&self, x: &[f64]) -> Result<Mat> {
        let n = self.spec.dim;
        let e = orthonormal_frame(self.spec, x)?;
        let mut b = Mat::zeros(n + 1, n + 1);
        b.view_mut((0, 0), (n, n)).copy_from(&e);
        b[(n, n)] = 1.0;
        Ok(b)
    }
}

/// Rolling transport between the orthonormal-frame ⊕ scalar bases at the
/// curve endpoints.
#[derive(Clone, Debug)]
pub struct TransportOperator {
    pub c: f64,
    pub start: Vec<f64>,
    pub end: Vec<f64>,
    pub matrix: Mat,
    /// The same map in the coordinate fibre bases.
    pub coordinate_matrix: Mat,
    pub steps_used: usize,
}

impl TransportOperator {
    /// max |Pᵀ η P - η|.
    pub fn metric_defect(&self) -> f64 {
        let n = self.matrix.nrows() - 1;
        let eta = FiberMetric { c: self.c }.eta(n);
        (self.matrix.transpose() * &eta * &self.matrix - eta).amax()
    }

    /// Applies the transport to coordinate fibre components at the start.
    pub fn apply_coords(&self, v: &[f64]) -> Vec<f64> {
        let r = self.coordinate_matrix.nrows();
        (0..r).map(|k| (0..r).map(|j| self.coordinate_matrix[(k, j)] * v[j]).sum()).collect()
    }
}

pub fn rolling_transport(spec: &ManifoldSpec, metric: FiberMetric, curve: &CurvePath) -> Result<TransportOperator> {
    let conn = Rolling::new(spec, metric);
    let coordinate_matrix = transport::integrate(&conn, curve)?;
    let (start, end) = (curve.start(), curve.end());
    let matrix = transport::to_frame_basis(&conn, &coordinate_matrix, &start, &end)?;
    Ok(TransportOperator {
        c: metric.c(),
        start,
        end,
        matrix,
        coordinate_matrix,
        steps_used: curve.steps_per_segment * curve.segments.len(),
    })
}

/// Curvature matrices of the rolling connection at `x`.
pub fn rolling_curvature_forms(spec: &ManifoldSpec, metric: FiberMetric, x: &[f64]) -> Result<CurvatureForms> {
    transport::curvature_forms(&Rolling::new(spec, metric), x, CURVATURE_STEP)
}

/// F(X, Y) on T_xM ⊕ ℝ in the coordinate fibre basis.
pub fn rolling_curvature(
    spec: &ManifoldSpec,
    metric: FiberMetric,
    x: &[f64],
    xv: &[f64],
    yv: &[f64],
) -> Result<CurvatureEndomorphism> {
    if xv.len() != spec.dim || yv.len() != spec.dim {
        return Err(Error::InvalidArgument("plane vectors have wrong length".into()));
    }
    let forms = rolling_curvature_forms(spec, metric, x)?;
    Ok(CurvatureEndomorphism {
        base: x.to_vec(),
        plane: (xv.to_vec(), yv.to_vec()),
        matrix: forms.apply(xv, yv),
        gram: metric.gram(&eval_metric(spec, x)?),
    })
}

/// Closed form F(X, Y)(V, r) = (R(X, Y)V - c(g(Y, V)X - g(X, V)Y), 0).
pub fn rolling_curvature_closed_form(
    spec: &ManifoldSpec,
    metric: FiberMetric,
    x: &[f64],
    xv: &[f64],
    yv: &[f64],
) -> Result<Mat> {
    let n = spec.dim;
    let r = geometry::riemann_endomorphism(spec, x, xv, yv)?;
    let g = &r.gram;
    let gx = g * nalgebra::DVector::from_column_slice(xv);
    let gy = g * nalgebra::DVector::from_column_slice(yv);
    let mut f = Mat::zeros(n + 1, n + 1);
    for k in 0..n {
        for j in 0..n {
            f[(k, j)] = r.matrix[(k, j)] - metric.c() * (xv[k] * gy[j] - yv[k] * gx[j]);
        }
    }
    Ok(f)
}

pub fn cone_spec(spec: &ManifoldSpec, s_range: Interval) -> Result<ManifoldSpec> {
    if !(s_range.lo > 0.0 && s_range.lo < s_range.hi && s_range.hi.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "cone range must be a bounded interval inside (0, inf), got ({}, {})",
            s_range.lo, s_range.hi
        )));
    }
    Ok(cone_metric(spec, s_range))
}

/// Differentiation direction on the cone.
#[derive(Clone, Debug, PartialEq)]
pub enum ConeDirection {
    /// A vector tangent to M.
    Tangent(Vec<f64>),
    /// ∂_s.
    Radial,
}

/// Section Y + b ∂_s of the cone tangent bundle; `y` and `b` are expressions
/// in the cone coordinates (x¹, ..., xⁿ, s).
#[derive(Clone, Debug)]
pub struct ConeField {
    pub y: Vec<Expr>,
    pub b: Expr,
}

impl ConeField {
    fn as_vector_field(&self) -> VectorField {
        let mut comps = self.y.clone();
        comps.push(self.b.clone());
        VectorField::new(comps)
    }
}

/// Levi-Civita derivative on C(M) from the warped-product rules
/// ∇̃_∂s ∂s = 0, ∇̃_∂s X = ∇̃_X ∂s = X/s, ∇̃_X Y = ∇_X Y - s g(X, Y) ∂s.
/// Returns the cone components (tangent part, ∂_s part).
pub fn cone_covariant(
    spec: &ManifoldSpec,
    field: &ConeField,
    direction: &ConeDirection,
    point: &[f64],
) -> Result<(Vec<f64>, f64)> {
    let n = spec.dim;
    if point.len() != n + 1 || field.y.len() != n {
        return Err(Error::InvalidArgument("cone point or field has wrong dimension".into()));
    }
    let (x, s) = (&point[..n], point[n]);
    if !(s > 0.0) {
        return Err(Error::InvalidArgument(format!("cone coordinate must be positive, got {s}")));
    }
    let vf = field.as_vector_field();
    let yv: Vec<f64> = field.y.iter().map(|e| e.eval(point)).collect();
    let b = field.b.eval(point);
    let dir: Vec<f64> = match direction {
        ConeDirection::Tangent(v) => {
            if v.len() != n {
                return Err(Error::InvalidArgument("tangent direction has wrong length".into()));
            }
            let mut d = v.clone();
            d.push(0.0);
            d
        }
        ConeDirection::Radial => {
            let mut d = vec![0.0; n];
            d.push(1.0);
            d
        }
    };
    // Plain directional derivative of the components.
    let deriv = vf.directional(point, &dir);
    let mut tangent: Vec<f64> = deriv[..n].to_vec();
    let mut radial = deriv[n];
    match direction {
        ConeDirection::Radial => {
            for k in 0..n {
                tangent[k] += yv[k] / s;
            }
        }
        ConeDirection::Tangent(v) => {
            let (g, gamma) = geometry::metric_and_christoffel(spec, x)?;
            let corr = gamma.apply(v, &yv);
            for k in 0..n {
                tangent[k] += corr[k] + b * v[k] / s;
            }
            let gvy: f64 = (0..n).map(|i| (0..n).map(|j| g[(i, j)] * v[i] * yv[j]).sum::<f64>()).sum();
            radial -= s * gvy;
        }
    }
    Ok((tangent, radial))
}

/// The same derivative from the Christoffel symbols of the cone metric.
pub fn cone_covariant_generic(
    cone: &ManifoldSpec,
    field: &ConeField,
    direction: &ConeDirection,
    point: &[f64],
) -> Result<(Vec<f64>, f64)> {
    let n = cone.dim - 1;
    let dir = match direction {
        ConeDirection::Tangent(v) => {
            let mut d = v.clone();
            d.push(0.0);
            d
        }
        ConeDirection::Radial => {
            let mut d = vec![0.0; n];
            d.push(1.0);
            d
        }
    };
    let out =
        geometry::covariant_derivative_field(cone, &VectorField::constant(&dir), &field.as_vector_field(), point)?;
    Ok((out[..n].to_vec(), out[n]))
}

/// I_(x,s): X + b ∂_s ↦ (sX, b), cone tangent coordinates to rolling fibre
/// coordinates.
pub fn cone_iso_matrix(n: usize, s: f64) -> Mat {
    let mut m = Mat::identity(n + 1, n + 1) * s;
    m[(n, n)] = 1.0;
    m
}

#[derive(Clone, Debug, Serialize)]
pub struct ConeResidual {
    /// Operator-norm distance between the conjugated cone transport and the
    /// rolling transport, in orthonormal frames.
    pub residual: f64,
    pub s0: f64,
    pub steps: usize,
}

/// Compares I ∘ P̃(Γ) ∘ I⁻¹ with P^R(γ) for a cone loop Γ = (γ, a).
pub fn verify_cone_isomorphism(cone: &ManifoldSpec, base: &ManifoldSpec, cone_loop: &CurvePath, s0: f64) -> Result<ConeResidual> {
    let n = base.dim;
    if cone.dim != n + 1 || cone_loop.dim() != n + 1 {
        return Err(Error::InvalidArgument("cone and base dimensions disagree".into()));
    }
    if !cone_loop.is_loop {
        return Err(Error::InvalidCurve("cone isomorphism needs a closed loop".into()));
    }
    let start = cone_loop.start();
    if (start[n] - s0).abs() > 1e-12 {
        return Err(Error::InvalidCurve(format!("loop starts at s = {}, expected {s0}", start[n])));
    }
    let cone_transport = geometry::levi_civita_transport_matrix(cone, cone_loop)?;
    let gamma = cone_loop.projected(n);
    let rolling = Rolling::sphere(base);
    let rolling_coord = transport::integrate(&rolling, &gamma)?;
    let iso = cone_iso_matrix(n, s0);
    let iso_inv = cone_iso_matrix(n, 1.0 / s0);
    let conjugated = &iso * cone_transport * iso_inv;
    let b = rolling.fiber_frame(&start[..n])?;
    let b_inv = b.clone().try_inverse().ok_or(Error::SingularMetric { point: start.clone() })?;
    let diff = &b_inv * (conjugated - rolling_coord) * &b;
    Ok(ConeResidual { residual: operator_norm(&diff), s0, steps: cone_loop.steps_per_segment })
}
