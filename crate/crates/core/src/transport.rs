//! Parallel transport and curvature for connections on vector bundles over a
//! chart, given by connection matrices ω_i (∇_i σ = ∂_i σ + ω_i σ).

use crate::curve::CurvePath;
use crate::error::{Error, Result};
use crate::geometry::step_for;
use crate::linalg::{commutator, skew_pairs, Mat};
use crate::manifold::ManifoldSpec;

pub trait Connection: Sync {
    fn base(&self) -> &ManifoldSpec;

    /// Fibre dimension.
    fn rank(&self) -> usize;

    /// Connection matrices ω_i at `x`, one per coordinate direction.
    fn forms(&self, x: &[f64]) -> Result<Vec<Mat>>;

    /// ω(v) = Σ v^i ω_i.
    fn form_along(&self, x: &[f64], v: &[f64]) -> Result<Mat> {
        let forms = self.forms(x)?;
        let r = self.rank();
        let mut out = Mat::zeros(r, r);
        for (w, vi) in forms.iter().zip(v) {
            if *vi != 0.0 {
                out += w * *vi;
            }
        }
        Ok(out)
    }

    /// Fibre metric in the coordinate fibre basis.
    fn fiber_gram(&self, x: &[f64]) -> Result<Mat>;

    /// Orthonormal fibre frame (columns, in the coordinate fibre basis).
    fn fiber_frame(&self, x: &[f64]) -> Result<Mat>;
}

/// State visible to a transport observer at an integration node.
pub struct Node<'a> {
    /// Global node index, 0 at the start of the curve.
    pub index: usize,
    pub point: &'a [f64],
    pub velocity: &'a [f64],
    /// Accumulated transport from the curve start to this node, coordinate
    /// fibre bases.
    pub transport: &'a Mat,
}

/// Solves Ṁ = -ω(ẋ) M along the curve with fixed-step RK4 and returns the
/// transport in the coordinate fibre bases at the two endpoints.
pub fn integrate<C: Connection + ?Sized>(conn: &C, curve: &CurvePath) -> Result<Mat> {
    integrate_observed(conn, curve, &mut |_| Ok(()))
}

pub fn integrate_observed<C: Connection + ?Sized>(
    conn: &C,
    curve: &CurvePath,
    observer: &mut dyn FnMut(&Node) -> Result<()>,
) -> Result<Mat> {
    curve.validate()?;
    let n = conn.base().dim;
    if curve.dim() != n {
        return Err(Error::InvalidCurve(format!(
            "curve has dimension {}, manifold has {n}",
            curve.dim()
        )));
    }
    let r = conn.rank();
    let steps = curve.steps_per_segment;
    let h = 1.0 / steps as f64;
    let mut m = Mat::identity(r, r);
    let mut x = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut index = 0usize;

    let eval = |seg: &crate::curve::Segment, t: f64, x: &mut [f64], v: &mut [f64]| -> Result<Mat> {
        seg.point(t, x);
        seg.velocity(t, v);
        if !conn.base().contains(x) {
            return Err(Error::DomainViolation { point: x.to_vec() });
        }
        if v.iter().all(|c| *c == 0.0) {
            return Ok(Mat::zeros(r, r));
        }
        Ok(-conn.form_along(x, v)?)
    };

    {
        let seg = &curve.segments[0];
        seg.point(0.0, &mut x);
        seg.velocity(0.0, &mut v);
        if !conn.base().contains(&x) {
            return Err(Error::DomainViolation { point: x.clone() });
        }
        observer(&Node { index, point: &x, velocity: &v, transport: &m })?;
    }

    for seg in &curve.segments {
        let mut a0 = eval(seg, 0.0, &mut x, &mut v)?;
        for s in 0..steps {
            let t = s as f64 * h;
            let a_mid = eval(seg, t + 0.5 * h, &mut x, &mut v)?;
            let a1 = eval(seg, t + h, &mut x, &mut v)?;
            let k1 = &a0 * &m;
            let k2 = &a_mid * (&m + &k1 * (0.5 * h));
            let k3 = &a_mid * (&m + &k2 * (0.5 * h));
            let k4 = &a1 * (&m + &k3 * h);
            m += (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0);
            index += 1;
            observer(&Node { index, point: &x, velocity: &v, transport: &m })?;
            a0 = a1;
        }
    }
    Ok(m)
}

/// Curvature matrices F_ij = ∂_i ω_j - ∂_j ω_i + [ω_i, ω_j] for i < j.
#[derive(Clone, Debug)]
pub struct CurvatureForms {
    pub n: usize,
    pub pairs: Vec<(usize, usize)>,
    pub forms: Vec<Mat>,
}

impl CurvatureForms {
    pub fn get(&self, i: usize, j: usize) -> Mat {
        use std::cmp::Ordering;
        let r = self.forms[0].nrows();
        match i.cmp(&j) {
            Ordering::Equal => Mat::zeros(r, r),
            Ordering::Less => self.forms[self.pair_index(i, j)].clone(),
            Ordering::Greater => -self.forms[self.pair_index(j, i)].clone(),
        }
    }

    fn pair_index(&self, i: usize, j: usize) -> usize {
        // Row-major enumeration of i < j.
        i * self.n - i * (i + 1) / 2 + (j - i - 1)
    }

    /// F(X, Y) = Σ_{i<j} (X^i Y^j - X^j Y^i) F_ij.
    pub fn apply(&self, xv: &[f64], yv: &[f64]) -> Mat {
        let r = self.forms[0].nrows();
        let mut out = Mat::zeros(r, r);
        for (k, &(i, j)) in self.pairs.iter().enumerate() {
            let w = xv[i] * yv[j] - xv[j] * yv[i];
            if w != 0.0 {
                out += &self.forms[k] * w;
            }
        }
        out
    }
}

/// Curvature of `conn` at `x` from a sixth-order central stencil on the
/// connection forms with relative step `h_rel`.
pub fn curvature_forms<C: Connection + ?Sized>(conn: &C, x: &[f64], h_rel: f64) -> Result<CurvatureForms> {
    let spec = conn.base();
    spec.check_point(x)?;
    let n = spec.dim;
    let center = conn.forms(x)?;
    // derivs[i][j] = ∂_i ω_j
    let mut derivs: Vec<Vec<Mat>> = Vec::with_capacity(n);
    let mut p = x.to_vec();
    for i in 0..n {
        let h = step_for(h_rel, x[i]);
        let mut sample = |offset: f64| -> Result<Vec<Mat>> {
            p[i] = x[i] + offset;
            if !spec.contains(&p) {
                return Err(Error::DomainViolation { point: p.clone() });
            }
            let w = conn.forms(&p);
            p[i] = x[i];
            w
        };
        let p3 = sample(3.0 * h)?;
        let p2 = sample(2.0 * h)?;
        let p1 = sample(h)?;
        let m1 = sample(-h)?;
        let m2 = sample(-2.0 * h)?;
        let m3 = sample(-3.0 * h)?;
        derivs.push(
            (0..n)
                .map(|j| ((&p1[j] - &m1[j]) * 45.0 - (&p2[j] - &m2[j]) * 9.0 + (&p3[j] - &m3[j])) / (60.0 * h))
                .collect(),
        );
    }
    let pairs = skew_pairs(n);
    let forms = pairs
        .iter()
        .map(|&(i, j)| &derivs[i][j] - &derivs[j][i] + commutator(&center[i], &center[j]))
        .collect();
    Ok(CurvatureForms { n, pairs, forms })
}

/// Change of fibre basis: `m` in coordinate bases to the orthonormal fibre
/// frames at the endpoints, B(x1)⁻¹ m B(x0).
pub fn to_frame_basis<C: Connection + ?Sized>(conn: &C, m: &Mat, x0: &[f64], x1: &[f64]) -> Result<Mat> {
    let b0 = conn.fiber_frame(x0)?;
    let b1 = conn.fiber_frame(x1)?;
    let b1_inv = b1.try_inverse().ok_or(Error::SingularMetric { point: x1.to_vec() })?;
    Ok(b1_inv * m * b0)
}
