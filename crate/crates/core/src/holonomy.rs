//! Numerical rolling holonomy: loop families, the spanned Lie algebra,
//! its skew commutant, and classification against the candidate list.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::connections::{FiberMetric, Rolling};
use crate::curve::{CurvePath, Segment, DEFAULT_STEPS};
use crate::error::{Error, Result};
use crate::geometry::CURVATURE_STEP;
use crate::linalg::{commutator, frobenius_inner, logm, null_space, row_svd, skew_part, skew_to_vec, vec_to_skew, Mat};
use crate::manifold::ManifoldSpec;
use crate::transport::{self, Connection};

pub const RECTANGLE_SIDES: [f64; 3] = [0.05, 0.1, 0.2];
pub const DEFAULT_RANK_TOL: f64 = 1e-6;
pub const DEFAULT_LOOPS: usize = 64;
pub const DEFAULT_SEED: u64 = 7;

/// Clearance kept between loops and the domain boundary, so that
/// difference stencils stay inside the chart.
const DOMAIN_MARGIN: f64 = 0.05;
const TRIG_HARMONICS: usize = 2;
const TRIG_AMPLITUDE: f64 = 0.3;

fn inside_with_margin(spec: &ManifoldSpec, p: &[f64]) -> bool {
    p.iter().zip(&spec.domain).all(|(v, iv)| {
        let m = DOMAIN_MARGIN * v.abs().max(1.0);
        v - m > iv.lo && v + m < iv.hi
    })
}

/// Deterministic loop family based at `base`: corner rectangles in every
/// coordinate plane at each of [`RECTANGLE_SIDES`], followed by `count`
/// seeded trigonometric loops.
pub fn generate_loops(spec: &ManifoldSpec, base: &[f64], count: usize, seed: u64) -> Result<Vec<CurvePath>> {
    spec.check_point(base)?;
    let n = spec.dim;
    let mut loops = Vec::new();
    for &delta in &RECTANGLE_SIDES {
        for i in 0..n {
            for j in (i + 1)..n {
                let rect = CurvePath::corner_rectangle(base, i, j, delta);
                for seg in &rect.segments {
                    if !inside_with_margin(spec, &seg.start()) {
                        return Err(Error::InvalidArgument(format!(
                            "domain too small for a rectangle of side {delta} at {base:?}"
                        )));
                    }
                }
                loops.push(rect);
            }
        }
    }
    loops.extend(trig_loops(spec, base, count, seed)?);
    Ok(loops)
}

/// `count` seeded closed trigonometric loops based at `base`, shrunk until
/// they keep clear of the domain boundary.
pub fn trig_loops(spec: &ManifoldSpec, base: &[f64], count: usize, seed: u64) -> Result<Vec<CurvePath>> {
    spec.check_point(base)?;
    let n = spec.dim;
    let mut loops = Vec::with_capacity(count);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..count {
        let mut sin = Vec::with_capacity(TRIG_HARMONICS);
        let mut cos = Vec::with_capacity(TRIG_HARMONICS);
        for h in 1..=TRIG_HARMONICS {
            let amp = TRIG_AMPLITUDE / h as f64;
            sin.push((0..n).map(|_| amp * rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>());
            cos.push((0..n).map(|_| amp * rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>());
        }
        let mut scale = 1.0;
        let mut tries = 0;
        let lp = loop {
            let seg = Segment::Trig {
                center: base.to_vec(),
                sin: sin.iter().map(|v| v.iter().map(|c| c * scale).collect()).collect(),
                cos: cos.iter().map(|v| v.iter().map(|c| c * scale).collect()).collect(),
            };
            let candidate = CurvePath::new(vec![seg], true)?.with_steps(64);
            if candidate.sample_nodes().iter().all(|p| inside_with_margin(spec, p)) {
                break candidate.with_steps(DEFAULT_STEPS);
            }
            tries += 1;
            if tries > 30 {
                return Err(Error::InvalidArgument(format!("domain too small for loops at {base:?}")));
            }
            scale *= 0.5;
        };
        loops.push(lp);
    }
    Ok(loops)
}

/// Transport around one loop with its principal logarithm.
#[derive(Clone, Debug)]
pub struct HolonomySample {
    pub loop_id: usize,
    pub base: Vec<f64>,
    /// Transport in the base orthonormal frame ⊕ scalar basis.
    pub matrix: Mat,
    pub log_matrix: Option<Mat>,
}

#[derive(Clone, Debug)]
pub struct HolonomyOptions {
    pub rank_tol: f64,
    pub steps: usize,
    /// Curvature endomorphisms sampled along each loop and pulled back.
    pub curvature_samples_per_loop: usize,
    /// Optional rotation of the base orthonormal frame of T_xM.
    pub frame_rotation: Option<Mat>,
}

impl Default for HolonomyOptions {
    fn default() -> Self {
        HolonomyOptions {
            rank_tol: DEFAULT_RANK_TOL,
            steps: DEFAULT_STEPS,
            curvature_samples_per_loop: 4,
            frame_rotation: None,
        }
    }
}

/// Estimated holonomy algebra at a base point, in the orthonormal frame ⊕
/// scalar basis.
#[derive(Clone, Debug)]
pub struct HolonomyAlgebra {
    pub base: Vec<f64>,
    /// Frobenius-orthonormal skew matrices spanning the algebra.
    pub basis: Vec<Mat>,
    pub rank: usize,
    pub singular_values: Vec<f64>,
    pub rank_tolerance: f64,
    /// Absolute cutoff applied alongside the relative tolerance.
    pub noise_floor: f64,
    pub samples: Vec<HolonomySample>,
    /// Largest skew defect among all evidence matrices.
    pub max_skew_defect: f64,
    pub notes: Vec<String>,
}

impl HolonomyAlgebra {
    pub fn fiber_dim(&self) -> usize {
        self.base.len() + 1
    }

    /// σ_rank / σ_{rank+1}; infinite when no smaller value exists or it is 0.
    pub fn gap(&self) -> f64 {
        match (self.rank.checked_sub(1).map(|k| self.singular_values.get(k)), self.singular_values.get(self.rank)) {
            (Some(Some(a)), Some(b)) if *b > 0.0 => a / b,
            _ => f64::INFINITY,
        }
    }

    /// Largest residual of [b_i, b_j] after projection onto the span.
    pub fn closure_residual(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.basis.len() {
            for j in (i + 1)..self.basis.len() {
                let c = commutator(&self.basis[i], &self.basis[j]);
                let mut rest = c.clone();
                for b in &self.basis {
                    rest -= b * frobenius_inner(&c, b);
                }
                worst = worst.max(rest.norm());
            }
        }
        worst
    }

    /// Orthogonal projection of `m` onto the span.
    pub fn project(&self, m: &Mat) -> Mat {
        let mut out = Mat::zeros(m.nrows(), m.ncols());
        for b in &self.basis {
            out += b * frobenius_inner(m, b);
        }
        out
    }
}

struct LoopEvidence {
    sample: HolonomySample,
    curvature: Vec<Mat>,
    skew_defect: f64,
    note: Option<String>,
}

fn skew_defect(m: &Mat) -> f64 {
    (m + m.transpose()).amax()
}

fn evidence_for_loop(
    conn: &Rolling,
    loop_id: usize,
    curve: &CurvePath,
    opts: &HolonomyOptions,
    b0: &Mat,
    b0_inv: &Mat,
) -> Result<LoopEvidence> {
    let total = curve.segments.len() * curve.steps_per_segment;
    let k = opts.curvature_samples_per_loop;
    let picks: Vec<usize> = (1..=k).map(|s| s * total / (k + 1)).collect();
    let mut curvature = Vec::new();
    let coord = transport::integrate_observed(conn, curve, &mut |node| {
        if picks.contains(&node.index) {
            let forms = transport::curvature_forms(conn, node.point, CURVATURE_STEP)?;
            let pt = node.transport;
            let pt_inv = pt.clone().try_inverse().ok_or(Error::SingularMetric { point: node.point.to_vec() })?;
            for f in &forms.forms {
                curvature.push(b0_inv * &pt_inv * f * pt * b0);
            }
        }
        Ok(())
    })?;
    let matrix = b0_inv * coord * b0;
    let mut skew_max = curvature.iter().map(skew_defect).fold(0.0, f64::max);
    let (log_matrix, note) = match logm(&matrix) {
        Ok(l) => {
            skew_max = skew_max.max(skew_defect(&l));
            (Some(l), None)
        }
        Err(e) => (None, Some(format!("loop {loop_id}: logarithm discarded ({e})"))),
    };
    let base = curve.start();
    Ok(LoopEvidence {
        sample: HolonomySample { loop_id, base, matrix, log_matrix },
        curvature,
        skew_defect: skew_max,
        note,
    })
}

/// Spans loop logarithms and pulled-back curvature endomorphisms and reads
/// off the rank from the singular values.
pub fn estimate_algebra(
    spec: &ManifoldSpec,
    base: &[f64],
    loops: &[CurvePath],
    opts: &HolonomyOptions,
) -> Result<HolonomyAlgebra> {
    spec.check_point(base)?;
    let n = spec.dim;
    let conn = Rolling::new(spec, FiberMetric::SPHERE);
    let mut b0 = conn.fiber_frame(base)?;
    if let Some(q) = &opts.frame_rotation {
        if q.nrows() != n || q.ncols() != n {
            return Err(Error::InvalidArgument(format!("frame rotation must be {n}x{n}")));
        }
        let mut r = Mat::identity(n + 1, n + 1);
        r.view_mut((0, 0), (n, n)).copy_from(q);
        b0 = b0 * r;
    }
    let b0_inv = b0.clone().try_inverse().ok_or(Error::SingularMetric { point: base.to_vec() })?;
    for (id, lp) in loops.iter().enumerate() {
        let start = lp.start();
        if !lp.is_loop || start.iter().zip(base).any(|(a, b)| (a - b).abs() > 1e-12) {
            return Err(Error::InvalidCurve(format!("loop {id} is not based at {base:?}")));
        }
    }
    let evidence: Vec<Result<LoopEvidence>> = loops
        .par_iter()
        .enumerate()
        .map(|(id, lp)| {
            let curve = lp.clone().with_steps(opts.steps);
            evidence_for_loop(&conn, id, &curve, opts, &b0, &b0_inv)
        })
        .collect();

    let mut rows: Vec<Mat> = Vec::new();
    let mut samples = Vec::with_capacity(loops.len());
    let mut notes = Vec::new();
    let mut max_skew_defect = 0.0f64;

    let base_forms = transport::curvature_forms(&conn, base, CURVATURE_STEP)?;
    for f in &base_forms.forms {
        let pulled = &b0_inv * f * &b0;
        max_skew_defect = max_skew_defect.max(skew_defect(&pulled));
        rows.push(skew_part(&pulled));
    }
    for ev in evidence {
        let ev = ev?;
        max_skew_defect = max_skew_defect.max(ev.skew_defect);
        if let Some(note) = ev.note {
            notes.push(note);
        }
        if let Some(l) = &ev.sample.log_matrix {
            rows.push(skew_part(l));
        }
        rows.extend(ev.curvature.iter().map(skew_part));
        samples.push(ev.sample);
    }
    if max_skew_defect > 1e-7 {
        notes.push(format!("evidence skew defect {max_skew_defect:e} exceeds 1e-7"));
    }

    let dim = (n + 1) * n / 2;
    let mut stacked = Mat::zeros(rows.len(), dim);
    for (k, m) in rows.iter().enumerate() {
        stacked.set_row(k, &skew_to_vec(m).transpose());
    }
    let (singular_values, directions) = row_svd(&stacked);
    let sigma_max = singular_values.first().copied().unwrap_or(0.0);
    let noise_floor = 1e-6 * (rows.len() as f64).sqrt();
    let cutoff = (opts.rank_tol * sigma_max).max(noise_floor);
    let rank = singular_values.iter().take(dim).filter(|&&s| s >= cutoff).count();
    let basis = (0..rank).map(|k| vec_to_skew(&directions.row(k).transpose(), n + 1)).collect();
    let singular_values = singular_values.into_iter().take(dim).collect();
    Ok(HolonomyAlgebra {
        base: base.to_vec(),
        basis,
        rank,
        singular_values,
        rank_tolerance: opts.rank_tol,
        noise_floor,
        samples,
        max_skew_defect,
        notes,
    })
}

/// Skew matrices commuting with every basis element; orthonormal basis of
/// the null space of J ↦ ([J, b_i])_i.
pub fn commutant_skew(algebra: &HolonomyAlgebra) -> Vec<Mat> {
    commutant_of(&algebra.basis, algebra.fiber_dim())
}

pub fn commutant_of(basis: &[Mat], size: usize) -> Vec<Mat> {
    let dim = size * (size - 1) / 2;
    if basis.is_empty() {
        return (0..dim)
            .map(|k| {
                let mut v = crate::linalg::Vector::zeros(dim);
                v[k] = 1.0;
                vec_to_skew(&v, size)
            })
            .collect();
    }
    let unit = |k: usize| {
        let mut v = crate::linalg::Vector::zeros(dim);
        v[k] = 1.0;
        vec_to_skew(&v, size)
    };
    let block = size * size;
    let mut a = Mat::zeros(basis.len() * block, dim);
    for k in 0..dim {
        let e = unit(k);
        for (i, b) in basis.iter().enumerate() {
            let c = commutator(&e, b);
            for (idx, val) in c.iter().enumerate() {
                a[(i * block + idx, k)] = *val;
            }
        }
    }
    let ns = null_space(&a, 1e-5);
    (0..ns.ncols()).map(|c| vec_to_skew(&ns.column(c).into_owned(), size)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum HolonomyLabel {
    Trivial,
    /// SO(N) with N = n + 1.
    SO(usize),
    U(usize),
    SU(usize),
    Sp(usize),
    SpSp1(usize),
    Spin7,
    Undetermined,
}

impl fmt::Display for HolonomyLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HolonomyLabel::Trivial => write!(f, "TRIVIAL"),
            HolonomyLabel::SO(k) => write!(f, "SO({k})"),
            HolonomyLabel::U(k) => write!(f, "U({k})"),
            HolonomyLabel::SU(k) => write!(f, "SU({k})"),
            HolonomyLabel::Sp(k) => write!(f, "Sp({k})"),
            HolonomyLabel::SpSp1(k) => write!(f, "SpSp1({k})"),
            HolonomyLabel::Spin7 => write!(f, "Spin7"),
            HolonomyLabel::Undetermined => write!(f, "UNDETERMINED"),
        }
    }
}

impl HolonomyLabel {
    pub fn parse(s: &str) -> Option<HolonomyLabel> {
        let s = s.trim();
        match s {
            "TRIVIAL" => return Some(HolonomyLabel::Trivial),
            "Spin7" => return Some(HolonomyLabel::Spin7),
            "UNDETERMINED" => return Some(HolonomyLabel::Undetermined),
            _ => {}
        }
        let open = s.find('(')?;
        let inner = s[open + 1..].strip_suffix(')')?;
        let k: usize = inner.parse().ok()?;
        match &s[..open] {
            "SO" => Some(HolonomyLabel::SO(k)),
            "U" => Some(HolonomyLabel::U(k)),
            "SU" => Some(HolonomyLabel::SU(k)),
            "Sp" => Some(HolonomyLabel::Sp(k)),
            "SpSp1" => Some(HolonomyLabel::SpSp1(k)),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GroupVerdict {
    pub label: HolonomyLabel,
    pub controllable: bool,
    pub algebra_dim: usize,
    pub commutant_skew_dim: usize,
    pub notes: Vec<String>,
}

pub const SU2_NOTE: &str = "su(2) and sp(1) coincide for n = 3; a 3-dimensional commutant places the \
holonomy in the symplectic (3-Sasakian) chain, and SU(2) cannot occur as the rolling holonomy of a \
Sasaki-Einstein 3-manifold";

/// Matrix-level checks that separate U from SU when the commutant is one
/// dimensional: whether J lies in the algebra, and the largest |⟨b_i, J⟩|.
#[derive(Clone, Copy, Debug)]
pub struct TraceCheck {
    pub j_in_span: bool,
    pub max_trace: f64,
}

pub fn trace_check(algebra: &HolonomyAlgebra, j: &Mat) -> TraceCheck {
    let unit = j / j.norm();
    let proj = algebra.project(&unit);
    TraceCheck {
        j_in_span: (&proj - &unit).norm() < 1e-5,
        max_trace: algebra.basis.iter().map(|b| frobenius_inner(b, &unit).abs()).fold(0.0, f64::max),
    }
}

/// Table lookup on (algebra dimension, commutant dimension, n).
pub fn classify_counts(
    algebra_dim: usize,
    commutant_dim: usize,
    n: usize,
    trace: Option<TraceCheck>,
) -> Result<GroupVerdict> {
    let size = n + 1;
    let full = size * n / 2;
    if algebra_dim > full || commutant_dim > full {
        return Err(Error::InvalidArgument(format!(
            "dimensions ({algebra_dim}, {commutant_dim}) exceed dim so({size}) = {full}"
        )));
    }
    if algebra_dim == 0 && commutant_dim != full {
        return Err(Error::InvalidArgument(format!(
            "a trivial algebra commutes with all of so({size}), got commutant dimension {commutant_dim}"
        )));
    }
    let mut notes = Vec::new();
    let label = if algebra_dim == 0 {
        HolonomyLabel::Trivial
    } else if algebra_dim == full {
        HolonomyLabel::SO(size)
    } else if n % 2 == 1 {
        let m = (n - 1) / 2;
        let k4 = (n % 4 == 3).then(|| (n - 3) / 4);
        let sp_dim = |k: usize| (k + 1) * (2 * k + 3);
        if algebra_dim == (m + 1) * (m + 1) && commutant_dim == 1 && trace.map_or(true, |t| t.j_in_span) {
            HolonomyLabel::U(m + 1)
        } else if algebra_dim + 1 == (m + 1) * (m + 1)
            && commutant_dim == 1
            && trace.map_or(true, |t| t.max_trace < 1e-5)
        {
            HolonomyLabel::SU(m + 1)
        } else if let Some(k) = k4.filter(|&k| algebra_dim == sp_dim(k) && commutant_dim == 3) {
            if n == 3 {
                notes.push(SU2_NOTE.to_string());
            }
            HolonomyLabel::Sp(k + 1)
        } else if let Some(k) = k4.filter(|&k| algebra_dim == sp_dim(k) + 3 && commutant_dim == 0) {
            HolonomyLabel::SpSp1(k + 1)
        } else if n == 7 && algebra_dim == 21 && commutant_dim == 0 {
            HolonomyLabel::Spin7
        } else {
            notes.push(format!(
                "no candidate matches algebra dimension {algebra_dim} with commutant dimension {commutant_dim} for n = {n}"
            ));
            HolonomyLabel::Undetermined
        }
    } else {
        notes.push(format!(
            "n = {n} is even; only the trivial and full cases are classified (algebra dimension {algebra_dim})"
        ));
        HolonomyLabel::Undetermined
    };
    Ok(GroupVerdict {
        controllable: matches!(label, HolonomyLabel::SO(_)),
        label,
        algebra_dim,
        commutant_skew_dim: commutant_dim,
        notes,
    })
}

pub fn classify(algebra: &HolonomyAlgebra) -> Result<GroupVerdict> {
    let n = algebra.base.len();
    let commutant = commutant_skew(algebra);
    let trace = (commutant.len() == 1).then(|| trace_check(algebra, &commutant[0]));
    let mut verdict = classify_counts(algebra.rank, commutant.len(), n, trace)?;
    verdict.notes.extend(algebra.notes.iter().cloned());
    Ok(verdict)
}

pub fn controllability(verdict: &GroupVerdict) -> (bool, String) {
    let text = match verdict.label {
        HolonomyLabel::SO(k) => format!("full rolling holonomy SO({k}): the rolling system is controllable"),
        HolonomyLabel::U(k) => format!("holonomy U({k}): M is Sasakian; not controllable"),
        HolonomyLabel::SU(k) => format!("holonomy SU({k}): M is Sasaki-Einstein; not controllable"),
        HolonomyLabel::Sp(k) => format!("holonomy Sp({k}): M is 3-Sasakian; not controllable"),
        HolonomyLabel::SpSp1(k) => format!("holonomy Sp({k})Sp(1): proper subgroup; not controllable"),
        HolonomyLabel::Spin7 => "holonomy Spin(7): proper subgroup; not controllable".to_string(),
        HolonomyLabel::Trivial => {
            "trivial holonomy: the rolling distribution is involutive; not controllable".to_string()
        }
        HolonomyLabel::Undetermined => format!(
            "undetermined (algebra dimension {}, commutant dimension {}); treated as not controllable",
            verdict.algebra_dim, verdict.commutant_skew_dim
        ),
    };
    (verdict.controllable, text)
}

/// Orthonormal basis of the full so(size).
pub fn full_algebra_basis(size: usize) -> Vec<Mat> {
    commutant_of(&[], size)
}
