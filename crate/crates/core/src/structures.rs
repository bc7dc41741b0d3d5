//! Sasakian and 3-Sasakian structures read off from parallel complex
//! structures J^R of the rolling connection, and the converse construction.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::connections::{FiberMetric, Rolling};
use crate::curve::{CurvePath, Segment};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::geometry::{
    self, eval_metric, metric_and_christoffel, orthonormal_frame, stereographic_differential,
    stereographic_to_sphere, VectorField,
};
use crate::holonomy::{commutant_skew, trig_loops, HolonomyAlgebra};
use crate::linalg::{commutator, operator_norm, Mat, Vector};
use crate::manifold::ManifoldSpec;
use crate::transport::{self, Connection};

/// Default spacing of the difference lattice.
pub const DEFAULT_LATTICE_STEP: f64 = 1e-4;
const NEIGHBOR_STEPS: usize = 4;
const STRUCTURE_TOL: f64 = 1e-6;

/// ε_{ijk} for indices in {0, 1, 2}.
pub fn epsilon(i: usize, j: usize, k: usize) -> f64 {
    match (i, j, k) {
        (0, 1, 2) | (1, 2, 0) | (2, 0, 1) => 1.0,
        (0, 2, 1) | (2, 1, 0) | (1, 0, 2) => -1.0,
        _ => 0.0,
    }
}

/// Largest violation of J_i J_j = -ε_ijk J_k and J_i² = -I.
pub fn quaternion_defect(triple: &[Mat; 3]) -> f64 {
    let size = triple[0].nrows();
    let id = Mat::identity(size, size);
    let mut worst = 0.0f64;
    for i in 0..3 {
        for j in 0..3 {
            let prod = &triple[i] * &triple[j];
            let want = if i == j {
                -id.clone()
            } else {
                let k = 3 - i - j;
                &triple[k] * (-epsilon(i, j, k))
            };
            worst = worst.max((prod - want).amax());
        }
    }
    worst
}

#[derive(Clone, Debug)]
pub enum InvariantStructure {
    Single(Mat),
    Triple([Mat; 3]),
}

impl InvariantStructure {
    pub fn matrices(&self) -> Vec<Mat> {
        match self {
            InvariantStructure::Single(j) => vec![j.clone()],
            InvariantStructure::Triple(t) => t.to_vec(),
        }
    }
}

fn unit_complex(m: &Mat) -> Mat {
    let size = m.nrows() as f64;
    m * (size.sqrt() / m.norm())
}

/// Flips `j` so that Z = J(0, 1) has positive first nonzero component in the
/// frame; if Z vanishes, the scalar row decides.
fn apply_sign_rule(j: Mat) -> Mat {
    let n = j.nrows() - 1;
    let first = (0..n)
        .map(|k| j[(k, n)])
        .chain((0..n).map(|k| j[(n, k)]))
        .find(|v| v.abs() > 1e-8);
    match first {
        Some(v) if v < 0.0 => -j,
        _ => j,
    }
}

fn check_commutes(algebra: &HolonomyAlgebra, j: &Mat) -> Result<()> {
    for b in &algebra.basis {
        let c = commutator(j, b).amax();
        if c > 1e-5 {
            return Err(Error::NoInvariantStructure(format!("seed fails to commute with the algebra ({c:e})")));
        }
    }
    Ok(())
}

/// Parallel complex structure(s) at the base point from the commutant of the
/// holonomy algebra, in the base orthonormal frame ⊕ scalar basis.
///
/// A one-dimensional commutant yields a single J; a three-dimensional one a
/// triple with J_i J_j = -ε_ijk J_k. When the commutant is larger the
/// structure is not determined by the algebra and `seed` must be supplied.
pub fn invariant_complex_structure(algebra: &HolonomyAlgebra, seed: Option<&InvariantStructure>) -> Result<InvariantStructure> {
    let size = algebra.fiber_dim();
    let id = Mat::identity(size, size);
    if let Some(seed) = seed {
        for j in seed.matrices() {
            if j.nrows() != size || j.ncols() != size {
                return Err(Error::InvalidArgument(format!("seed must be {size}x{size}")));
            }
            if (&j * &j + &id).amax() > STRUCTURE_TOL {
                return Err(Error::NoInvariantStructure("seed does not square to -I".into()));
            }
            check_commutes(algebra, &j)?;
        }
        if let InvariantStructure::Triple(t) = seed {
            let d = quaternion_defect(t);
            if d > STRUCTURE_TOL {
                return Err(Error::NoInvariantStructure(format!("seed triple violates the ε relations ({d:e})")));
            }
        }
        return Ok(seed.clone());
    }
    let commutant = commutant_skew(algebra);
    match commutant.len() {
        1 => {
            let j = apply_sign_rule(unit_complex(&commutant[0]));
            let d = (&j * &j + &id).amax();
            if d > STRUCTURE_TOL {
                return Err(Error::NoInvariantStructure(format!("commutant generator has |J² + I| = {d:e}")));
            }
            Ok(InvariantStructure::Single(j))
        }
        3 => {
            let j1 = apply_sign_rule(unit_complex(&commutant[0]));
            let x = &commutant[1];
            let anti = (x + &j1 * x * &j1) * 0.5;
            if anti.norm() < 1e-6 {
                return Err(Error::NoInvariantStructure("commutant is not quaternionic".into()));
            }
            let j2 = apply_sign_rule(unit_complex(&anti));
            let j3 = -(&j1 * &j2);
            let triple = [j1, j2, j3];
            let d = quaternion_defect(&triple);
            if d > STRUCTURE_TOL {
                return Err(Error::NoInvariantStructure(format!("quaternion relations fail ({d:e})")));
            }
            Ok(InvariantStructure::Triple(triple))
        }
        0 => Err(Error::NoInvariantStructure("the commutant of the holonomy algebra is trivial".into())),
        k => Err(Error::NoInvariantStructure(format!(
            "commutant has dimension {k}; the structure is not determined by the holonomy, supply a seed"
        ))),
    }
}

/// J^R at a target point, coordinate fibre basis.
#[derive(Clone, Debug)]
pub struct JrSample {
    pub point: Vec<f64>,
    pub jr: Mat,
    /// |J^R along the canonical path - J^R along the reversed-order path|.
    pub path_residual: f64,
}

/// Coordinate polyline from `from` to `to`, changing coordinates in `order`.
fn staircase(from: &[f64], to: &[f64], order: &[usize], steps: usize) -> Result<CurvePath> {
    let mut pts = vec![from.to_vec()];
    let mut cur = from.to_vec();
    for &k in order {
        if cur[k] != to[k] {
            cur[k] = to[k];
            pts.push(cur.clone());
        }
    }
    Ok(CurvePath::polyline(&pts, false)?.with_steps(steps))
}

fn conjugate(p: &Mat, j: &Mat) -> Result<Mat> {
    let inv = p.clone().try_inverse().ok_or_else(|| Error::InvalidArgument("singular transport".into()))?;
    Ok(p * j * inv)
}

/// Extends J₀ (base frame basis) by J^R(x) = P J₀ P⁻¹ along the coordinate
/// staircase base → x, and compares with the staircase in reverse
/// coordinate order.
pub fn extend_parallel(spec: &ManifoldSpec, j0: &[Mat], base: &[f64], targets: &[Vec<f64>], steps: usize) -> Result<Vec<Vec<JrSample>>> {
    let conn = Rolling::sphere(spec);
    let b0 = conn.fiber_frame(base)?;
    let b0_inv = b0.clone().try_inverse().ok_or(Error::SingularMetric { point: base.to_vec() })?;
    let j0_coord: Vec<Mat> = j0.iter().map(|j| &b0 * j * &b0_inv).collect();
    let n = spec.dim;
    let forward: Vec<usize> = (0..n).collect();
    let backward: Vec<usize> = (0..n).rev().collect();
    targets
        .par_iter()
        .map(|x| -> Result<Vec<JrSample>> {
            spec.check_point(x)?;
            let pa = transport::integrate(&conn, &staircase(base, x, &forward, steps)?)?;
            let pb = transport::integrate(&conn, &staircase(base, x, &backward, steps)?)?;
            let bx = conn.fiber_frame(x)?;
            let bx_inv = bx.clone().try_inverse().ok_or(Error::SingularMetric { point: x.clone() })?;
            j0_coord
                .iter()
                .map(|j| {
                    let ja = conjugate(&pa, j)?;
                    let jb = conjugate(&pb, j)?;
                    let path_residual = (&bx_inv * (&ja - &jb) * &bx).amax();
                    Ok(JrSample { point: x.clone(), jr: ja, path_residual })
                })
                .collect()
        })
        .collect()
}

/// J^R fields on a lattice: at each centre, values at x ± h e_l and
/// x ± 2h e_l obtained by short transports from the centre.
#[derive(Clone, Debug)]
pub struct JrLattice {
    pub base: Vec<f64>,
    pub h: f64,
    pub sites: Vec<JrSite>,
}

#[derive(Clone, Debug)]
pub struct JrSite {
    pub point: Vec<f64>,
    /// One coordinate-basis matrix per structure.
    pub jr: Vec<Mat>,
    /// `neighbors[l][o]` at offsets (+h, -h, +2h, -2h) along coordinate l.
    pub neighbors: Vec<[Vec<Mat>; 4]>,
    pub path_residual: f64,
}

const OFFSETS: [f64; 4] = [1.0, -1.0, 2.0, -2.0];

pub fn jr_lattice(
    spec: &ManifoldSpec,
    j0: &[Mat],
    base: &[f64],
    centers: &[Vec<f64>],
    h: f64,
    steps: usize,
) -> Result<JrLattice> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument("lattice step must be positive".into()));
    }
    let extended = extend_parallel(spec, j0, base, centers, steps)?;
    let conn = Rolling::sphere(spec);
    let sites = extended
        .into_par_iter()
        .map(|samples| -> Result<JrSite> {
            let x = samples[0].point.clone();
            let jr: Vec<Mat> = samples.iter().map(|s| s.jr.clone()).collect();
            let path_residual = samples.iter().map(|s| s.path_residual).fold(0.0, f64::max);
            let mut neighbors = Vec::with_capacity(spec.dim);
            for l in 0..spec.dim {
                let mut vals: [Vec<Mat>; 4] = Default::default();
                for (o, off) in OFFSETS.iter().enumerate() {
                    let mut y = x.clone();
                    y[l] += off * h;
                    let path = CurvePath::new(vec![Segment::Linear { from: x.clone(), to: y }], false)?
                        .with_steps(NEIGHBOR_STEPS);
                    let p = transport::integrate(&conn, &path)?;
                    vals[o] = jr.iter().map(|j| conjugate(&p, j)).collect::<Result<_>>()?;
                }
                neighbors.push(vals);
            }
            Ok(JrSite { point: x, jr, neighbors, path_residual })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(JrLattice { base: base.to_vec(), h, sites })
}

/// Structure data at one point, coordinate components.
#[derive(Clone, Debug)]
pub struct StructurePoint {
    pub point: Vec<f64>,
    pub z: Vec<f64>,
    pub alpha: Vec<f64>,
    pub j: Mat,
    /// ω_ij = g(J∂_i, ∂_j).
    pub omega: Mat,
    pub jr: Mat,
    /// Scalar component of J^R(0, 1), zero in theory.
    pub scalar_defect: f64,
}

fn split_jr(jr: &Mat, g: &Mat, point: &[f64]) -> StructurePoint {
    let n = g.nrows();
    let j = jr.view((0, 0), (n, n)).into_owned();
    let z: Vec<f64> = (0..n).map(|k| jr[(k, n)]).collect();
    let alpha: Vec<f64> = (0..n).map(|k| -jr[(n, k)]).collect();
    let omega = j.transpose() * g;
    StructurePoint { point: point.to_vec(), z, alpha, j, omega, jr: jr.clone(), scalar_defect: jr[(n, n)] }
}

#[derive(Clone, Debug)]
pub struct SasakiSite {
    pub center: StructurePoint,
    pub neighbors: Vec<[StructurePoint; 4]>,
}

#[derive(Clone, Debug)]
pub struct SasakiStructure {
    pub spec_name: String,
    pub h: f64,
    pub sites: Vec<SasakiSite>,
}

/// Splits the `which`-th J^R of the lattice into (Z, α, J).
pub fn extract_sasaki(spec: &ManifoldSpec, lattice: &JrLattice, which: usize) -> Result<SasakiStructure> {
    let mut sites = Vec::with_capacity(lattice.sites.len());
    for site in &lattice.sites {
        let jr = site.jr.get(which).ok_or_else(|| Error::InvalidArgument(format!("no structure {which}")))?;
        let g = eval_metric(spec, &site.point)?;
        let center = split_jr(jr, &g, &site.point);
        if center.scalar_defect.abs() > STRUCTURE_TOL {
            return Err(Error::Hypothesis(format!(
                "J^R(0,1) has scalar component {:e} at {:?}",
                center.scalar_defect, site.point
            )));
        }
        let mut neighbors = Vec::with_capacity(spec.dim);
        for (l, vals) in site.neighbors.iter().enumerate() {
            let mk = |o: usize| -> Result<StructurePoint> {
                let mut y = site.point.clone();
                y[l] += OFFSETS[o] * lattice.h;
                Ok(split_jr(&vals[o][which], &spec.metric_at(&y), &y))
            };
            neighbors.push([mk(0)?, mk(1)?, mk(2)?, mk(3)?]);
        }
        sites.push(SasakiSite { center, neighbors });
    }
    Ok(SasakiStructure { spec_name: spec.name.clone(), h: lattice.h, sites })
}

/// Fourth-order and the two second-order central differences.
struct Diff<T> {
    d4: T,
    d2h: T,
    d2h2: T,
}

fn diff_mats(vals: [&Mat; 4], h: f64) -> Diff<Mat> {
    let (p1, m1, p2, m2) = (vals[0], vals[1], vals[2], vals[3]);
    Diff {
        d4: ((p1 - m1) * 8.0 - (p2 - m2)) / (12.0 * h),
        d2h: (p1 - m1) / (2.0 * h),
        d2h2: (p2 - m2) / (4.0 * h),
    }
}

fn col(v: &[f64]) -> Mat {
    Mat::from_column_slice(v.len(), 1, v)
}

/// Residuals of the Sasakian identities, maxima over lattice sites.
#[derive(Clone, Debug, Default, Serialize)]
pub struct SasakiResiduals {
    /// JX - ∇_X Z.
    pub j_minus_nabla_z: f64,
    /// (∇_X J)Y - g(Z, Y)X + g(X, Y)Z.
    pub nabla_j: f64,
    /// g(∇_X Z, Y) + g(X, ∇_Y Z).
    pub killing: f64,
    /// dα - 2ω.
    pub d_alpha: f64,
    /// ω + ωᵀ.
    pub omega_skew: f64,
    /// dα(Z, ·).
    pub d_alpha_z: f64,
    /// Smallest singular value of ω on ker α (minimum over sites).
    pub omega_nondegeneracy: f64,
    /// R(X, Z)Y - g(Z, Y)X + g(X, Y)Z.
    pub curvature: f64,
    /// α(Z) - 1.
    pub alpha_z: f64,
    /// JZ.
    pub jz: f64,
    /// J² + I - Z ⊗ α.
    pub j_squared: f64,
    /// g(JX, JY) - g(X, Y) + α(X)α(Y).
    pub compatibility: f64,
    /// |Z| - 1.
    pub z_norm: f64,
    /// Spread between second-order differences at h and 2h.
    pub coarse_indicator: f64,
    pub lattice_step: f64,
    pub sites: usize,
}

impl SasakiResiduals {
    pub fn max_identity(&self) -> f64 {
        [
            self.j_minus_nabla_z,
            self.nabla_j,
            self.killing,
            self.d_alpha,
            self.omega_skew,
            self.d_alpha_z,
            self.curvature,
            self.alpha_z,
            self.jz,
            self.j_squared,
            self.compatibility,
            self.z_norm,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// Threshold on [`SasakiResiduals::coarse_indicator`] beyond which the
/// lattice is rejected.
pub const COARSE_LIMIT: f64 = 1e-4;

/// Evaluates every identity of a Sasakian structure at the lattice sites,
/// with fourth-order differences for derivatives.
pub fn verify_sasaki(spec: &ManifoldSpec, s: &SasakiStructure) -> Result<SasakiResiduals> {
    let per_site = s
        .sites
        .par_iter()
        .map(|site| verify_site(spec, site, s.h))
        .collect::<Result<Vec<_>>>()?;
    let mut out = SasakiResiduals { omega_nondegeneracy: f64::INFINITY, lattice_step: s.h, sites: s.sites.len(), ..Default::default() };
    for r in per_site {
        out.j_minus_nabla_z = out.j_minus_nabla_z.max(r.j_minus_nabla_z);
        out.nabla_j = out.nabla_j.max(r.nabla_j);
        out.killing = out.killing.max(r.killing);
        out.d_alpha = out.d_alpha.max(r.d_alpha);
        out.omega_skew = out.omega_skew.max(r.omega_skew);
        out.d_alpha_z = out.d_alpha_z.max(r.d_alpha_z);
        out.omega_nondegeneracy = out.omega_nondegeneracy.min(r.omega_nondegeneracy);
        out.curvature = out.curvature.max(r.curvature);
        out.alpha_z = out.alpha_z.max(r.alpha_z);
        out.jz = out.jz.max(r.jz);
        out.j_squared = out.j_squared.max(r.j_squared);
        out.compatibility = out.compatibility.max(r.compatibility);
        out.z_norm = out.z_norm.max(r.z_norm);
        out.coarse_indicator = out.coarse_indicator.max(r.coarse_indicator);
    }
    if out.coarse_indicator > COARSE_LIMIT {
        return Err(Error::LatticeTooCoarse(format!(
            "second-order differences at h and 2h disagree by {:e} (h = {})",
            out.coarse_indicator, s.h
        )));
    }
    Ok(out)
}

/// Orthonormal basis (columns) of the g-complement of `z`.
fn complement_basis(g: &Mat, z: &[f64]) -> Mat {
    let n = g.nrows();
    let zc = Vector::from_column_slice(z);
    let znorm = (zc.transpose() * g * &zc)[(0, 0)].sqrt();
    let zu = zc / znorm;
    let mut kept: Vec<Vector> = vec![zu];
    for k in 0..n {
        if kept.len() == n {
            break;
        }
        let mut v = Vector::zeros(n);
        v[k] = 1.0;
        for _ in 0..2 {
            for e in &kept {
                let p = (e.transpose() * g * &v)[(0, 0)];
                v -= e * p;
            }
        }
        let norm = (v.transpose() * g * &v)[(0, 0)].sqrt();
        if norm > 1e-6 {
            kept.push(v / norm);
        }
    }
    let mut out = Mat::zeros(n, n - 1);
    for (c, v) in kept.iter().skip(1).enumerate() {
        out.set_column(c, v);
    }
    out
}

fn verify_site(spec: &ManifoldSpec, site: &SasakiSite, h: f64) -> Result<SasakiResiduals> {
    let n = spec.dim;
    let c = &site.center;
    let x = &c.point;
    let (g, gamma) = metric_and_christoffel(spec, x)?;
    let e = orthonormal_frame(spec, x)?;
    let e_inv = e.transpose() * &g;
    let in_frame = |m: &Mat| operator_norm(&(&e_inv * m * &e));
    let bilinear = |m: &Mat| operator_norm(&(e.transpose() * m * &e));

    let mut coarse = 0.0f64;
    let mut dz = Mat::zeros(n, n); // (k, i) = ∂_i Z^k
    let mut dalpha = Mat::zeros(n, n); // (i, j) = ∂_i α_j
    let mut dj = Vec::with_capacity(n);
    for i in 0..n {
        let nb = &site.neighbors[i];
        let zs: Vec<Mat> = nb.iter().map(|p| col(&p.z)).collect();
        let dzi = diff_mats([&zs[0], &zs[1], &zs[2], &zs[3]], h);
        coarse = coarse.max((&dzi.d2h - &dzi.d2h2).amax());
        dz.set_column(i, &dzi.d4.column(0));
        let als: Vec<Mat> = nb.iter().map(|p| col(&p.alpha)).collect();
        let dai = diff_mats([&als[0], &als[1], &als[2], &als[3]], h);
        coarse = coarse.max((&dai.d2h - &dai.d2h2).amax());
        dalpha.set_row(i, &dai.d4.column(0).transpose());
        let dji = diff_mats([&nb[0].j, &nb[1].j, &nb[2].j, &nb[3].j], h);
        coarse = coarse.max((&dji.d2h - &dji.d2h2).amax());
        dj.push(dji.d4);
    }

    let zc = col(&c.z);
    let gz = &g * &zc;
    let nabla_z = &dz + gamma.contract(&c.z);
    let j_minus_nabla_z = in_frame(&(&c.j - &nabla_z));

    let mut nabla_j = 0.0f64;
    let mut curvature = 0.0f64;
    let riemann = geometry::riemann_tensor(spec, x)?;
    let id = Mat::identity(n, n);
    let nabla_j_i: Vec<Mat> = (0..n)
        .map(|i| {
            let gi = gamma.form(i);
            &dj[i] + &gi * &c.j - &c.j * &gi
        })
        .collect();
    for a in 0..n {
        let ea: Vec<f64> = e.column(a).iter().copied().collect();
        let eac = col(&ea);
        let mut t = Mat::zeros(n, n);
        for i in 0..n {
            t += &nabla_j_i[i] * ea[i];
        }
        let zg_ea = &zc * (&g * &eac).transpose();
        t -= &eac * gz.transpose();
        t += &zg_ea;
        nabla_j = nabla_j.max(in_frame(&t));
        let mut m = riemann.apply(&ea, &c.z);
        m -= &eac * gz.transpose();
        m += &zg_ea;
        curvature = curvature.max(in_frame(&m));
    }

    let g_nabla_z = &g * &nabla_z;
    let killing = bilinear(&(&g_nabla_z + g_nabla_z.transpose()));
    let d_alpha_form = &dalpha - dalpha.transpose();
    let d_alpha = bilinear(&(&d_alpha_form - &c.omega * 2.0));
    let omega_skew = bilinear(&(&c.omega + c.omega.transpose()));
    let contracted = d_alpha_form.transpose() * &zc;
    let d_alpha_z = (e.transpose() * contracted).norm();

    let d = complement_basis(&g, &c.z);
    let w = d.transpose() * &c.omega * &d;
    let omega_nondegeneracy = if w.nrows() == 0 { f64::INFINITY } else { w.singular_values().min() };

    let alpha_c = col(&c.alpha);
    let alpha_z = ((alpha_c.transpose() * &zc)[(0, 0)] - 1.0).abs();
    let jz_vec = &c.j * &zc;
    let jz = (jz_vec.transpose() * &g * &jz_vec)[(0, 0)].abs().sqrt();
    let j_squared = in_frame(&(&c.j * &c.j + &id - &zc * alpha_c.transpose()));
    let compatibility = bilinear(&(c.j.transpose() * &g * &c.j - &g + &alpha_c * alpha_c.transpose()));
    let z_norm = ((zc.transpose() * &g * &zc)[(0, 0)].sqrt() - 1.0).abs();

    Ok(SasakiResiduals {
        j_minus_nabla_z,
        nabla_j,
        killing,
        d_alpha,
        omega_skew,
        d_alpha_z,
        omega_nondegeneracy,
        curvature,
        alpha_z,
        jz,
        j_squared,
        compatibility,
        z_norm,
        coarse_indicator: coarse,
        lattice_step: h,
        sites: 1,
    })
}

/// J^R(X, r) = (JX + rZ, -g(X, Z)) as a coordinate fibre matrix.
pub fn assemble_jr(g: &Mat, z: &[f64], j: &Mat) -> Mat {
    let n = g.nrows();
    let gz = g * Vector::from_column_slice(z);
    let mut jr = Mat::zeros(n + 1, n + 1);
    jr.view_mut((0, 0), (n, n)).copy_from(j);
    for k in 0..n {
        jr[(k, n)] = z[k];
        jr[(n, k)] = -gz[k];
    }
    jr
}

/// (1,1)-tensor field, coordinate components.
#[derive(Clone)]
pub enum MatrixField {
    Expr(Vec<Vec<Expr>>),
    Func(Arc<dyn Fn(&[f64]) -> Mat + Send + Sync>),
}

impl fmt::Debug for MatrixField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MatrixField::Expr(rows) => f.debug_tuple("Expr").field(rows).finish(),
            MatrixField::Func(_) => f.write_str("Func(..)"),
        }
    }
}

impl MatrixField {
    pub fn eval(&self, x: &[f64]) -> Mat {
        match self {
            MatrixField::Expr(rows) => {
                let n = rows.len();
                Mat::from_fn(n, n, |r, c| rows[r][c].eval(x))
            }
            MatrixField::Func(f) => f(x),
        }
    }
}

/// Hypothesis residuals for a candidate Sasakian structure (Z, J).
#[derive(Clone, Debug, Default, Serialize)]
pub struct StructureHypotheses {
    pub z_norm: f64,
    pub killing: f64,
    pub jz: f64,
    pub j_squared: f64,
    pub compatibility: f64,
}

impl StructureHypotheses {
    pub fn max(&self) -> f64 {
        [self.z_norm, self.killing, self.jz, self.j_squared, self.compatibility].into_iter().fold(0.0, f64::max)
    }
}

fn structure_hypotheses(spec: &ManifoldSpec, z: &VectorField, j: &MatrixField, x: &[f64]) -> Result<StructureHypotheses> {
    let n = spec.dim;
    let (g, gamma) = metric_and_christoffel(spec, x)?;
    let e = orthonormal_frame(spec, x)?;
    let zv = z.eval(x);
    let zc = col(&zv);
    let jm = j.eval(x);
    let gz = &g * &zc;
    let nabla_z = z.jacobian(x) + gamma.contract(&zv);
    let gn = &g * &nabla_z;
    let id = Mat::identity(n, n);
    let jz = &jm * &zc;
    Ok(StructureHypotheses {
        z_norm: ((zc.transpose() * &g * &zc)[(0, 0)].sqrt() - 1.0).abs(),
        killing: operator_norm(&(e.transpose() * (&gn + gn.transpose()) * &e)),
        jz: (jz.transpose() * &g * &jz)[(0, 0)].abs().sqrt(),
        j_squared: operator_norm(&(e.transpose() * &g * (&jm * &jm + &id - &zc * gz.transpose()) * &e)),
        compatibility: operator_norm(&(e.transpose() * (jm.transpose() * &g * &jm - &g + &gz * gz.transpose()) * &e)),
    })
}

const HYPOTHESIS_TOL: f64 = 1e-5;

#[derive(Clone, Debug, Serialize)]
pub struct ConverseReport {
    pub hypotheses: StructureHypotheses,
    /// max ‖[P_loop, J^R]‖ over the loops, base frame basis.
    pub loop_commutator: f64,
    /// max |‖J^R v‖_h - ‖v‖_h| over random fibre vectors.
    pub isometry: f64,
    /// max ‖(J^R)² + I‖ at the sampled points.
    pub square: f64,
    pub loops: usize,
}

fn sample_points(spec: &ManifoldSpec, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| spec.sample_point(&mut rng)).collect()
}

/// Builds J^R from (Z, J) after checking the hypotheses (unit Killing Z,
/// JZ = 0, J² = -I + Z ⊗ α, compatibility), then measures parallelism as
/// the commutator of J^R with loop holonomies at `base`.
pub fn build_jr_from_structure(
    spec: &ManifoldSpec,
    z: &VectorField,
    j: &MatrixField,
    base: &[f64],
    loops: usize,
    seed: u64,
) -> Result<ConverseReport> {
    let mut hyp = StructureHypotheses::default();
    for x in sample_points(spec, 20, seed).iter().chain(std::iter::once(&base.to_vec())) {
        let h = structure_hypotheses(spec, z, j, x)?;
        hyp.z_norm = hyp.z_norm.max(h.z_norm);
        hyp.killing = hyp.killing.max(h.killing);
        hyp.jz = hyp.jz.max(h.jz);
        hyp.j_squared = hyp.j_squared.max(h.j_squared);
        hyp.compatibility = hyp.compatibility.max(h.compatibility);
    }
    if hyp.max() > HYPOTHESIS_TOL {
        return Err(Error::Hypothesis(format!("structure hypotheses fail: {hyp:?}")));
    }
    let conn = Rolling::sphere(spec);
    let g0 = eval_metric(spec, base)?;
    let jr0 = assemble_jr(&g0, &z.eval(base), &j.eval(base));
    let b0 = conn.fiber_frame(base)?;
    let b0_inv = b0.clone().try_inverse().ok_or(Error::SingularMetric { point: base.to_vec() })?;
    let jr_frame = &b0_inv * &jr0 * &b0;
    let family = trig_loops(spec, base, loops, seed)?;
    let loop_commutator = family
        .par_iter()
        .map(|lp| -> Result<f64> {
            let p = transport::integrate(&conn, lp)?;
            let pf = &b0_inv * p * &b0;
            Ok(operator_norm(&commutator(&pf, &jr_frame)))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut isometry = 0.0f64;
    let mut square = 0.0f64;
    let size = spec.dim + 1;
    for x in sample_points(spec, 10, seed + 1) {
        let g = eval_metric(spec, &x)?;
        let jr = assemble_jr(&g, &z.eval(&x), &j.eval(&x));
        let hmat = FiberMetric::SPHERE.gram(&g);
        square = square.max(in_fiber_frame(&conn, &x, &(&jr * &jr + Mat::identity(size, size)))?);
        for _ in 0..5 {
            let v = Vector::from_fn(size, |_, _| rng.gen_range(-1.0..1.0));
            let jv = &jr * &v;
            let a = (jv.transpose() * &hmat * &jv)[(0, 0)].sqrt();
            let b = (v.transpose() * &hmat * &v)[(0, 0)].sqrt();
            isometry = isometry.max((a - b).abs());
        }
    }
    Ok(ConverseReport { hypotheses: hyp, loop_commutator, isometry, square, loops: family.len() })
}

fn in_fiber_frame(conn: &Rolling, x: &[f64], m: &Mat) -> Result<f64> {
    let b = conn.fiber_frame(x)?;
    let b_inv = b.clone().try_inverse().ok_or(Error::SingularMetric { point: x.to_vec() })?;
    Ok(operator_norm(&(b_inv * m * b)))
}

/// Cross-structure residuals of a 3-Sasakian structure.
#[derive(Clone, Debug, Default, Serialize)]
pub struct ThreeSasakiResiduals {
    /// |g(Z_i, Z_j) - δ_ij|.
    pub z_orthonormal: f64,
    /// [Z_i, Z_j] - 2ε_ijk Z_k.
    pub bracket: f64,
    /// J_i Z_j + ε_ijk Z_k.
    pub j_z: f64,
    /// J_i^R J_j^R + ε_ijk J_k^R and (J_i^R)² + I.
    pub epsilon: f64,
}

#[derive(Clone, Debug)]
pub struct ThreeSasakiStructure {
    pub structures: [SasakiStructure; 3],
    pub residuals: ThreeSasakiResiduals,
}

pub fn extract_3sasaki(spec: &ManifoldSpec, lattice: &JrLattice) -> Result<ThreeSasakiStructure> {
    if lattice.sites.first().map_or(true, |s| s.jr.len() != 3) {
        return Err(Error::InvalidArgument("lattice must carry a triple of structures".into()));
    }
    let structures = [extract_sasaki(spec, lattice, 0)?, extract_sasaki(spec, lattice, 1)?, extract_sasaki(spec, lattice, 2)?];
    let n = spec.dim;
    let h = lattice.h;
    let mut res = ThreeSasakiResiduals::default();
    for (s, site) in lattice.sites.iter().enumerate() {
        let g = eval_metric(spec, &site.point)?;
        let conn = Rolling::sphere(spec);
        let triple = [site.jr[0].clone(), site.jr[1].clone(), site.jr[2].clone()];
        let b = conn.fiber_frame(&site.point)?;
        let b_inv = b.clone().try_inverse().ok_or(Error::SingularMetric { point: site.point.clone() })?;
        let framed = [&b_inv * &triple[0] * &b, &b_inv * &triple[1] * &b, &b_inv * &triple[2] * &b];
        res.epsilon = res.epsilon.max(quaternion_defect(&framed));
        let zs: Vec<Mat> = structures.iter().map(|st| col(&st.sites[s].center.z)).collect();
        // Jacobians (k, l) = ∂_l Z_i^k.
        let jac: Vec<Mat> = structures
            .iter()
            .map(|st| {
                let mut m = Mat::zeros(n, n);
                for l in 0..n {
                    let nb = &st.sites[s].neighbors[l];
                    let v: Vec<Mat> = nb.iter().map(|p| col(&p.z)).collect();
                    m.set_column(l, &diff_mats([&v[0], &v[1], &v[2], &v[3]], h).d4.column(0));
                }
                m
            })
            .collect();
        for i in 0..3 {
            for j in 0..3 {
                let gij = (zs[i].transpose() * &g * &zs[j])[(0, 0)];
                res.z_orthonormal = res.z_orthonormal.max((gij - if i == j { 1.0 } else { 0.0 }).abs());
                if i == j {
                    continue;
                }
                let k = 3 - i - j;
                let eps = epsilon(i, j, k);
                let bracket = &jac[j] * &zs[i] - &jac[i] * &zs[j] - &zs[k] * (2.0 * eps);
                res.bracket = res.bracket.max((&bracket.transpose() * &g * &bracket)[(0, 0)].abs().sqrt());
                let jz = &structures[i].sites[s].center.j * &zs[j] + &zs[k] * eps;
                res.j_z = res.j_z.max((&jz.transpose() * &g * &jz)[(0, 0)].abs().sqrt());
            }
        }
    }
    Ok(ThreeSasakiStructure { structures, residuals: res })
}

/// Residuals of the triple construction J_i^R(X, r) = (J_i X + r Z_i, -g(X, Z_i)),
/// split by the kind of fibre vector.
#[derive(Clone, Debug, Default, Serialize)]
pub struct TripleReport {
    pub hypotheses: StructureHypotheses,
    /// [Z_i, Z_j] - 2ε_ijk Z_k from symbolic Jacobians.
    pub bracket: f64,
    /// J_i^R J_j^R (0, 1) against (-ε_ijk Z_k, 0).
    pub cone_vector: f64,
    /// J_i^R J_j^R (X, 0) against -ε_ijk J_k^R (X, 0) for X ⊥ Z_1, Z_2, Z_3.
    pub horizontal: f64,
    /// The same for X in the span of the Z_l.
    pub vertical: f64,
    /// J_i Z_j + J_j Z_i, i ≠ j.
    pub anticommute: f64,
    /// (J_i^R)² + I.
    pub square: f64,
}

impl TripleReport {
    pub fn max_relation(&self) -> f64 {
        [self.cone_vector, self.horizontal, self.vertical, self.anticommute, self.square].into_iter().fold(0.0, f64::max)
    }
}

pub fn build_jr_triple(spec: &ManifoldSpec, fields: &[(VectorField, MatrixField); 3], points: usize, seed: u64) -> Result<TripleReport> {
    let n = spec.dim;
    let mut rep = TripleReport::default();
    let size = n + 1;
    let id = Mat::identity(size, size);
    for x in sample_points(spec, points, seed) {
        for (z, j) in fields {
            let h = structure_hypotheses(spec, z, j, &x)?;
            rep.hypotheses.z_norm = rep.hypotheses.z_norm.max(h.z_norm);
            rep.hypotheses.killing = rep.hypotheses.killing.max(h.killing);
            rep.hypotheses.jz = rep.hypotheses.jz.max(h.jz);
            rep.hypotheses.j_squared = rep.hypotheses.j_squared.max(h.j_squared);
            rep.hypotheses.compatibility = rep.hypotheses.compatibility.max(h.compatibility);
        }
        let g = eval_metric(spec, &x)?;
        let zs: Vec<Vector> = fields.iter().map(|(z, _)| Vector::from_vec(z.eval(&x))).collect();
        let jacs: Vec<Mat> = fields.iter().map(|(z, _)| z.jacobian(&x)).collect();
        let js: Vec<Mat> = fields.iter().map(|(_, j)| j.eval(&x)).collect();
        let jrs: Vec<Mat> = (0..3).map(|i| assemble_jr(&g, zs[i].as_slice(), &js[i])).collect();
        let gnorm = |v: &Vector| (v.transpose() * &g * v)[(0, 0)].abs().sqrt();
        let hnorm = |v: &Vector| {
            let t = v.rows(0, n).into_owned();
            ((t.transpose() * &g * &t)[(0, 0)] + v[n] * v[n]).abs().sqrt()
        };
        let lift = |v: &Vector, r: f64| {
            let mut out = Vector::zeros(size);
            out.rows_mut(0, n).copy_from(v);
            out[n] = r;
            out
        };
        // Horizontal test vectors: frame vectors projected off span(Z).
        let e = orthonormal_frame(spec, &x)?;
        let mut horizontal = Vec::new();
        for a in 0..n {
            let mut v = e.column(a).into_owned();
            for _ in 0..2 {
                for z in &zs {
                    let p = (z.transpose() * &g * &v)[(0, 0)];
                    v -= z * p;
                }
            }
            if gnorm(&v) > 1e-3 {
                horizontal.push(v);
            }
        }
        for i in 0..3 {
            rep.square = rep.square.max((&jrs[i] * &jrs[i] + &id).amax());
            for j in 0..3 {
                if i == j {
                    continue;
                }
                let k = 3 - i - j;
                let eps = epsilon(i, j, k);
                let prod = &jrs[i] * &jrs[j];
                let cone = &prod * lift(&Vector::zeros(n), 1.0) - lift(&(&zs[k] * -eps), 0.0);
                rep.cone_vector = rep.cone_vector.max(hnorm(&cone));
                let target = |v: &Vector| &prod * lift(v, 0.0) + &jrs[k] * lift(v, 0.0) * eps;
                for v in &horizontal {
                    rep.horizontal = rep.horizontal.max(hnorm(&target(v)) / gnorm(v));
                }
                for z in &zs {
                    rep.vertical = rep.vertical.max(hnorm(&target(z)));
                }
                let anti = &js[i] * &zs[j] + &js[j] * &zs[i];
                rep.anticommute = rep.anticommute.max(gnorm(&anti));
                let bracket = &jacs[j] * &zs[i] - &jacs[i] * &zs[j] - &zs[k] * (2.0 * eps);
                rep.bracket = rep.bracket.max(gnorm(&bracket));
            }
        }
    }
    if rep.hypotheses.max() > HYPOTHESIS_TOL || rep.bracket > HYPOTHESIS_TOL {
        return Err(Error::Hypothesis(format!(
            "triple hypotheses fail: {:?}, bracket {:e}",
            rep.hypotheses, rep.bracket
        )));
    }
    Ok(rep)
}

/// Right multiplication by i, j or k (`unit` = 1, 2, 3) on ℍ^{N/4} = ℝ^N,
/// quaternion components ordered (1, i, j, k) within each block.
pub fn quaternion_right_mult(size: usize, unit: usize) -> Mat {
    assert!(size % 4 == 0 && (1..=3).contains(&unit));
    // q·u for q = a + bi + cj + dk, as (component, source, sign).
    let table: [[(usize, f64); 4]; 3] = [
        [(1, -1.0), (0, 1.0), (3, 1.0), (2, -1.0)],
        [(2, -1.0), (3, -1.0), (0, 1.0), (1, 1.0)],
        [(3, -1.0), (2, 1.0), (1, -1.0), (0, 1.0)],
    ];
    let mut m = Mat::zeros(size, size);
    for blk in 0..size / 4 {
        for (out, &(src, sign)) in table[unit - 1].iter().enumerate() {
            m[(4 * blk + out, 4 * blk + src)] = sign;
        }
    }
    m
}

/// Identification Φ(u) = [dp(u) | p(u)] of T_uSⁿ ⊕ ℝ with ℝ^{n+1} for the
/// unit sphere in its stereographic chart.
pub fn sphere_fiber_identification(u: &[f64]) -> Mat {
    let n = u.len();
    let mut phi = Mat::zeros(n + 1, n + 1);
    phi.view_mut((0, 0), (n + 1, n)).copy_from(&stereographic_differential(u, 1.0));
    let p = stereographic_to_sphere(u, 1.0);
    for a in 0..=n {
        phi[(a, n)] = p[a];
    }
    phi
}

/// Killing field Z(p) = L p on the unit sphere, in stereographic
/// coordinates: Z = ((1+|u|²)/2)(w' + u w_{n+1}) with w = L p(u).
pub fn hopf_field(n: usize, l: &Mat) -> VectorField {
    let r2 = (0..n).fold(Expr::zero(), |acc, i| acc + Expr::var(i).powi(2));
    let d = Expr::one() + r2.clone();
    let mut p: Vec<Expr> = (0..n).map(|i| Expr::num(2.0) * Expr::var(i) / d.clone()).collect();
    p.push((r2 - Expr::one()) / d.clone());
    let w: Vec<Expr> = (0..=n)
        .map(|a| {
            (0..=n).fold(Expr::zero(), |acc, b| {
                let c = l[(a, b)];
                if c == 0.0 {
                    acc
                } else {
                    acc + Expr::num(c) * p[b].clone()
                }
            })
        })
        .collect();
    let half_d = d / Expr::num(2.0);
    VectorField::new(
        (0..n)
            .map(|i| half_d.clone() * (w[i].clone() + Expr::var(i) * w[n].clone()))
            .collect(),
    )
}

/// J X = ∇_X Z for Z = L p on the unit sphere, i.e. the tangential part of L,
/// as a chart tensor field.
pub fn hopf_tensor(n: usize, l: &Mat) -> MatrixField {
    let l = l.clone();
    MatrixField::Func(Arc::new(move |u: &[f64]| {
        let phi = sphere_fiber_identification(u);
        let phi_inv = phi.clone().try_inverse().expect("identification is orthogonal up to scale");
        let jr = phi_inv * &l * phi;
        jr.view((0, 0), (n, n)).into_owned()
    }))
}

/// J^R of the structure Z = L p in the coordinate fibre basis: Φ⁻¹ L Φ.
pub fn hopf_jr(u: &[f64], l: &Mat) -> Mat {
    let phi = sphere_fiber_identification(u);
    let phi_inv = phi.clone().try_inverse().expect("identification is invertible");
    phi_inv * l * phi
}

/// Standard triple of right multiplications on ℝ^{n+1}, n = 4k + 3,
/// expressed as J₀ in the base frame basis of the unit-sphere chart.
pub fn standard_triple_seed(spec: &ManifoldSpec, base: &[f64]) -> Result<[Mat; 3]> {
    let n = spec.dim;
    if (n + 1) % 4 != 0 {
        return Err(Error::InvalidArgument(format!("no quaternionic structure on S^{n}")));
    }
    let conn = Rolling::sphere(spec);
    let b = conn.fiber_frame(base)?;
    let b_inv = b.clone().try_inverse().ok_or(Error::SingularMetric { point: base.to_vec() })?;
    let mk = |unit: usize| &b_inv * hopf_jr(base, &quaternion_right_mult(n + 1, unit)) * &b;
    Ok([mk(1), mk(2), mk(3)])
}

/// Complex multiplication on ℝ^{2k}: e_{2a} ↦ e_{2a+1}, e_{2a+1} ↦ -e_{2a}.
pub fn complex_mult(size: usize) -> Mat {
    assert!(size % 2 == 0);
    let mut m = Mat::zeros(size, size);
    for a in 0..size / 2 {
        m[(2 * a + 1, 2 * a)] = 1.0;
        m[(2 * a, 2 * a + 1)] = -1.0;
    }
    m
}

fn is_unit_sphere(spec: &ManifoldSpec) -> bool {
    matches!(spec.builtin, Some(crate::manifold::Builtin::Sphere { radius, .. }) if radius == 1.0)
}

/// Ambient generators of the standard structures on a unit sphere: the
/// quaternionic triple when n = 4k + 3, complex multiplication for other odd n.
pub fn sphere_generators(spec: &ManifoldSpec) -> Option<Vec<Mat>> {
    let n = spec.dim;
    if !is_unit_sphere(spec) || n % 2 == 0 {
        return None;
    }
    Some(if n % 4 == 3 {
        (1..=3).map(|u| quaternion_right_mult(n + 1, u)).collect()
    } else {
        vec![complex_mult(n + 1)]
    })
}

/// Standard J₀ (single or triple) at `base` for unit odd-dimensional spheres.
pub fn sphere_seed(spec: &ManifoldSpec, base: &[f64]) -> Result<Option<InvariantStructure>> {
    let Some(gens) = sphere_generators(spec) else { return Ok(None) };
    let conn = Rolling::sphere(spec);
    let b = conn.fiber_frame(base)?;
    let b_inv = b.clone().try_inverse().ok_or(Error::SingularMetric { point: base.to_vec() })?;
    let mats: Vec<Mat> = gens.iter().map(|l| &b_inv * hopf_jr(base, l) * &b).collect();
    Ok(Some(match mats.len() {
        3 => InvariantStructure::Triple([mats[0].clone(), mats[1].clone(), mats[2].clone()]),
        _ => InvariantStructure::Single(mats[0].clone()),
    }))
}

/// Reference (Z, J) fields of the standard structures on unit odd spheres.
pub fn sphere_structures(spec: &ManifoldSpec) -> Option<Vec<(VectorField, MatrixField)>> {
    let n = spec.dim;
    let gens = sphere_generators(spec)?;
    Some(gens.iter().map(|l| (hopf_field(n, l), hopf_tensor(n, l))).collect())
}

/// Structure of the Heisenberg group: Z = ∂z and J with JX_i = -Y_i,
/// JY_i = X_i, JZ = 0 for the frame X_i = ∂x_i - y_i∂z, Y_i = ∂y_i + x_i∂z.
pub fn heisenberg_structure(m: usize) -> (VectorField, MatrixField) {
    let n = 2 * m + 1;
    let z = n - 1;
    let mut zc = vec![0.0; n];
    zc[z] = 1.0;
    let mut j = vec![vec![Expr::zero(); n]; n];
    for i in 0..m {
        let (xi, yi) = (2 * i, 2 * i + 1);
        j[yi][xi] = -Expr::one();
        j[z][xi] = -Expr::var(xi);
        j[xi][yi] = Expr::one();
        j[z][yi] = -Expr::var(yi);
    }
    (VectorField::constant(&zc), MatrixField::Expr(j))
}

/// Known structure fields for the built-ins that carry one.
pub fn reference_structures(spec: &ManifoldSpec) -> Option<Vec<(VectorField, MatrixField)>> {
    match spec.builtin {
        Some(crate::manifold::Builtin::Heisenberg { m }) => Some(vec![heisenberg_structure(m)]),
        _ => sphere_structures(spec),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::holonomy::{estimate_algebra, generate_loops, HolonomyOptions};
    use crate::manifold::{euclidean, heisenberg, sphere};

    #[test]
    fn epsilon_is_antisymmetric() {
        for (i, j, k) in [(0, 1, 2), (1, 2, 0), (2, 0, 1)] {
            assert_eq!(epsilon(i, j, k), 1.0);
            assert_eq!(epsilon(j, i, k), -1.0);
        }
        assert_eq!(epsilon(0, 0, 1), 0.0);
    }

    #[test]
    fn right_multiplication_is_quaternionic() {
        let t = [quaternion_right_mult(8, 1), quaternion_right_mult(8, 2), quaternion_right_mult(8, 3)];
        assert_eq!(quaternion_defect(&t), 0.0);
        for m in &t {
            assert_eq!(m.transpose(), -m.clone());
        }
    }

    #[test]
    fn assembled_jr_on_cone_vector() {
        let g = Mat::identity(3, 3) * 2.0;
        let jr = assemble_jr(&g, &[0.0, 0.0, 1.0], &Mat::zeros(3, 3));
        let v = &jr * Vector::from_vec(vec![0.0, 0.0, 0.0, 1.0]);
        assert_eq!(v.as_slice(), &[0.0, 0.0, 1.0, 0.0]);
    }

    fn heisenberg_lattice() -> (ManifoldSpec, JrLattice) {
        let h = heisenberg(1);
        let base = [0.0; 3];
        let loops = generate_loops(&h, &base, 8, 7).unwrap();
        let alg = estimate_algebra(&h, &base, &loops, &HolonomyOptions::default()).unwrap();
        let InvariantStructure::Single(j0) = invariant_complex_structure(&alg, None).unwrap() else {
            panic!("expected a single structure")
        };
        let mut centers = vec![base.to_vec()];
        centers.extend(sample_points(&h, 4, 99));
        let lattice = jr_lattice(&h, &[j0], &base, &centers, DEFAULT_LATTICE_STEP, 256).unwrap();
        (h, lattice)
    }

    #[test]
    fn heisenberg_extraction_reproduces_structure() {
        let (h, lattice) = heisenberg_lattice();
        assert!(lattice.sites.iter().all(|s| s.path_residual < 1e-5));
        let s = extract_sasaki(&h, &lattice, 0).unwrap();
        let frames = geometry::frame_fields(&h).unwrap();
        for site in &s.sites {
            let p = &site.center.point;
            let (xf, yf, zf) = (frames[0].eval(p), frames[1].eval(p), frames[2].eval(p));
            let jx = &site.center.j * Vector::from_vec(xf.clone());
            let jy = &site.center.j * Vector::from_vec(yf.clone());
            let jz = &site.center.j * Vector::from_vec(zf.clone());
            for k in 0..3 {
                assert!((jx[k] + yf[k]).abs() < 1e-5, "JX {jx:?} at {p:?}");
                assert!((jy[k] - xf[k]).abs() < 1e-5);
                assert!(jz[k].abs() < 1e-5);
                assert!((site.center.z[k] - zf[k]).abs() < 1e-5);
            }
            let g = h.metric_at(p);
            let om = |a: &[f64], b: &[f64]| {
                (Vector::from_column_slice(a).transpose() * &site.center.omega * Vector::from_column_slice(b))[(0, 0)]
            };
            assert!((om(&xf, &yf) + 1.0).abs() < 1e-5);
            assert!(om(&xf, &xf).abs() < 1e-5);
            let _ = g;
        }
        let r = verify_sasaki(&h, &s).unwrap();
        assert!(r.max_identity() < 1e-4, "{r:?}");
        assert!(r.omega_nondegeneracy > 0.1);
        // Construction from the extracted data reproduces J^R.
        for site in &s.sites {
            let g = h.metric_at(&site.center.point);
            let jr = assemble_jr(&g, &site.center.z, &site.center.j);
            assert!((jr - &site.center.jr).amax() < 1e-6);
        }
    }

    #[test]
    fn opposite_sign_gives_negated_structure() {
        let (h, lattice) = heisenberg_lattice();
        let mut flipped = lattice.clone();
        for site in &mut flipped.sites {
            for j in &mut site.jr {
                *j = -j.clone();
            }
            for nb in &mut site.neighbors {
                for vals in nb.iter_mut() {
                    for j in vals.iter_mut() {
                        *j = -j.clone();
                    }
                }
            }
        }
        let a = extract_sasaki(&h, &lattice, 0).unwrap();
        let b = extract_sasaki(&h, &flipped, 0).unwrap();
        for (sa, sb) in a.sites.iter().zip(&b.sites) {
            for k in 0..3 {
                assert_eq!(sa.center.z[k], -sb.center.z[k]);
                assert_eq!(sa.center.alpha[k], -sb.center.alpha[k]);
            }
        }
        assert!(verify_sasaki(&h, &b).unwrap().max_identity() < 1e-4);
    }

    #[test]
    fn no_structure_for_full_holonomy() {
        let e = euclidean(3);
        let base = [0.0; 3];
        let loops = generate_loops(&e, &base, 4, 7).unwrap();
        let alg = estimate_algebra(&e, &base, &loops, &HolonomyOptions::default()).unwrap();
        assert_eq!(alg.rank, 6);
        assert!(matches!(invariant_complex_structure(&alg, None), Err(Error::NoInvariantStructure(_))));
    }

    #[test]
    fn non_killing_field_has_large_killing_residual() {
        let e = euclidean(3);
        let z = VectorField::new(vec![Expr::var(0), Expr::zero(), Expr::zero()]);
        let h = structure_hypotheses(&e, &z, &MatrixField::Expr(vec![vec![Expr::zero(); 3]; 3]), &[0.3, 0.0, 0.0])
            .unwrap();
        assert!((h.killing - 2.0).abs() < 1e-9);
    }

    #[test]
    fn heisenberg_structure_holds_for_larger_m() {
        let h = heisenberg(2);
        let (z, j) = heisenberg_structure(2);
        for x in sample_points(&h, 5, 2) {
            assert!(structure_hypotheses(&h, &z, &j, &x).unwrap().max() < 1e-8);
        }
    }

    #[test]
    fn five_sphere_has_a_single_standard_structure() {
        let s = sphere(5, 1.0);
        let fields = sphere_structures(&s).unwrap();
        assert_eq!(fields.len(), 1);
        let rep = build_jr_from_structure(&s, &fields[0].0, &fields[0].1, &[0.0; 5], 4, 2).unwrap();
        assert!(rep.loop_commutator < 1e-8, "{rep:?}");
        assert!(sphere_generators(&sphere(4, 1.0)).is_none());
        assert!(sphere_generators(&sphere(3, 2.0)).is_none());
    }

    #[test]
    fn heisenberg_converse_is_parallel() {
        let h = heisenberg(1);
        let (z, j) = heisenberg_structure(1);
        let rep = build_jr_from_structure(&h, &z, &j, &[0.0; 3], 8, 5).unwrap();
        assert!(rep.loop_commutator < 1e-5, "{rep:?}");
        assert!(rep.isometry < 1e-8 && rep.square < 1e-8);
    }

    #[test]
    fn converse_rejects_non_killing_field() {
        let e = euclidean(3);
        let z = VectorField::new(vec![Expr::var(0), Expr::zero(), Expr::zero()]);
        let j = MatrixField::Expr(vec![vec![Expr::zero(); 3]; 3]);
        assert!(matches!(build_jr_from_structure(&e, &z, &j, &[0.0; 3], 2, 1), Err(Error::Hypothesis(_))));
    }

    #[test]
    fn hopf_fields_on_three_sphere() {
        let s = sphere(3, 1.0);
        let fields: Vec<(VectorField, MatrixField)> =
            (1..=3).map(|u| (hopf_field(3, &quaternion_right_mult(4, u)), hopf_tensor(3, &quaternion_right_mult(4, u)))).collect();
        let arr = [fields[0].clone(), fields[1].clone(), fields[2].clone()];
        let rep = build_jr_triple(&s, &arr, 10, 3).unwrap();
        assert!(rep.max_relation() < 1e-9, "{rep:?}");
        assert!(rep.bracket < 1e-9);
    }

    #[test]
    fn coarse_lattice_is_rejected() {
        let s = sphere(3, 1.0);
        let base = [0.0; 3];
        let j0 = standard_triple_seed(&s, &base).unwrap();
        let centers = vec![vec![0.4, -0.3, 0.5]];
        let fine = jr_lattice(&s, &j0[..1], &base, &centers, 1e-4, 128).unwrap();
        let st = extract_sasaki(&s, &fine, 0).unwrap();
        let r = verify_sasaki(&s, &st).unwrap();
        assert!(r.max_identity() < 1e-6, "{r:?}");
        let coarse = jr_lattice(&s, &j0[..1], &base, &centers, 0.2, 128).unwrap();
        let st = extract_sasaki(&s, &coarse, 0).unwrap();
        assert!(matches!(verify_sasaki(&s, &st), Err(Error::LatticeTooCoarse(_))));
    }

    #[test]
    fn seven_sphere_triple_extraction() {
        let s = sphere(7, 1.0);
        let base = [0.0; 7];
        let j0 = standard_triple_seed(&s, &base).unwrap();
        let mut centers = vec![base.to_vec()];
        centers.extend(sample_points(&s, 3, 11));
        let lattice = jr_lattice(&s, &j0, &base, &centers, DEFAULT_LATTICE_STEP, 128).unwrap();
        let t = extract_3sasaki(&s, &lattice).unwrap();
        let r = &t.residuals;
        assert!(r.z_orthonormal < 1e-6 && r.bracket < 1e-5 && r.j_z < 1e-5 && r.epsilon < 1e-5, "{r:?}");
        for (unit, st) in (1..=3).zip(&t.structures) {
            let hopf = hopf_field(7, &quaternion_right_mult(8, unit));
            for site in &st.sites {
                let want = hopf.eval(&site.center.point);
                for k in 0..7 {
                    assert!((site.center.z[k] - want[k]).abs() < 1e-6);
                }
            }
            assert!(verify_sasaki(&s, st).unwrap().max_identity() < 1e-5);
        }
    }

    #[test]
    fn d_alpha_converges_under_refinement() {
        let s = sphere(3, 1.0);
        let base = [0.0; 3];
        let j0 = standard_triple_seed(&s, &base).unwrap();
        let centers = vec![vec![0.3, 0.2, -0.4]];
        let errs: Vec<f64> = [0.04, 0.02, 0.01]
            .iter()
            .map(|&h| {
                let lattice = jr_lattice(&s, &j0[..1], &base, &centers, h, 512).unwrap();
                let st = extract_sasaki(&s, &lattice, 0).unwrap();
                verify_site(&s, &st.sites[0], h).unwrap().d_alpha
            })
            .collect();
        let order = crate::linalg::observed_order(&[0.04, 0.02, 0.01], &errs);
        assert!(order >= 2.0, "{errs:?} {order}");
    }
}
