//! Chart-based Riemannian manifold descriptions and the built-in family.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::linalg::Mat;

/// Open coordinate interval; either end may be infinite.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const REAL_LINE: Interval = Interval { lo: f64::NEG_INFINITY, hi: f64::INFINITY };

    pub fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub fn contains(&self, v: f64) -> bool {
        v > self.lo && v < self.hi
    }

    /// Finite sub-interval used for random sampling.
    pub fn sampling_range(&self) -> (f64, f64) {
        match (self.lo.is_finite(), self.hi.is_finite()) {
            (true, true) => {
                let pad = 0.1 * (self.hi - self.lo);
                (self.lo + pad, self.hi - pad)
            }
            (true, false) => (self.lo + 0.5, self.lo + 2.0),
            (false, true) => (self.hi - 2.0, self.hi - 0.5),
            (false, false) => (-1.5, 1.5),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Builtin {
    Euclidean { n: usize },
    /// Round sphere of `radius`, stereographic chart from the north pole.
    Sphere { n: usize, radius: f64 },
    /// Upper half-space model, last coordinate positive.
    Hyperbolic { n: usize },
    /// Heisenberg group of dimension 2m+1 with its left-invariant frame
    /// declared orthonormal.
    Heisenberg { m: usize },
    Cone { child: Box<Builtin>, s_range: Interval },
}

impl fmt::Display for Builtin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Builtin::Euclidean { n } => write!(f, "euclidean:{n}"),
            Builtin::Sphere { n, radius } => write!(f, "sphere:{n}:radius={radius}"),
            Builtin::Hyperbolic { n } => write!(f, "hyperbolic:{n}"),
            Builtin::Heisenberg { m } => write!(f, "heisenberg:m={m}"),
            Builtin::Cone { child, .. } => write!(f, "cone:{child}"),
        }
    }
}

impl Builtin {
    /// Parse names such as `euclidean:3`, `sphere:3:radius=1`,
    /// `heisenberg:m=1`, `hyperbolic:3`, `cone:<child>`.
    pub fn parse(name: &str) -> Result<Self> {
        let bad = || Error::InvalidSpec(format!("unknown built-in `{name}`"));
        if let Some(child) = name.strip_prefix("cone:") {
            return Ok(Builtin::Cone {
                child: Box::new(Builtin::parse(child)?),
                s_range: DEFAULT_CONE_RANGE,
            });
        }
        let mut parts = name.split(':');
        let kind = parts.next().ok_or_else(bad)?;
        let rest: Vec<&str> = parts.collect();
        let positive = |s: &str| -> Result<usize> {
            let v: usize = s.trim().parse().map_err(|_| bad())?;
            if v == 0 {
                return Err(bad());
            }
            Ok(v)
        };
        match kind {
            "euclidean" | "hyperbolic" => {
                let [n] = rest.as_slice() else { return Err(bad()) };
                let n = positive(n)?;
                Ok(if kind == "euclidean" { Builtin::Euclidean { n } } else { Builtin::Hyperbolic { n } })
            }
            "sphere" => {
                let n = positive(rest.first().ok_or_else(bad)?)?;
                let mut radius = 1.0_f64;
                for opt in &rest[1..] {
                    let v = opt.strip_prefix("radius=").ok_or_else(bad)?;
                    radius = v.trim().parse().map_err(|_| bad())?;
                    if !(radius > 0.0 && radius.is_finite()) {
                        return Err(bad());
                    }
                }
                Ok(Builtin::Sphere { n, radius })
            }
            "heisenberg" => {
                let [m] = rest.as_slice() else { return Err(bad()) };
                let m = positive(m.strip_prefix("m=").unwrap_or(m))?;
                Ok(Builtin::Heisenberg { m })
            }
            _ => Err(bad()),
        }
    }
}

pub const DEFAULT_CONE_RANGE: Interval = Interval { lo: 0.25, hi: 4.0 };

/// A Riemannian manifold given in a single chart by expression-valued
/// metric components.
#[derive(Clone, Debug)]
pub struct ManifoldSpec {
    pub name: String,
    pub dim: usize,
    pub coords: Vec<String>,
    /// `metric[i][j]` is g_ij as an expression in the coordinates.
    pub metric: Vec<Vec<Expr>>,
    /// `frame[a][k]` is the k-th coordinate component of frame field a.
    pub frame: Option<Vec<Vec<Expr>>>,
    pub domain: Vec<Interval>,
    pub builtin: Option<Builtin>,
}

impl ManifoldSpec {
    pub fn builtin(b: &Builtin) -> ManifoldSpec {
        match b {
            Builtin::Euclidean { n } => euclidean(*n),
            Builtin::Sphere { n, radius } => sphere(*n, *radius),
            Builtin::Hyperbolic { n } => hyperbolic(*n),
            Builtin::Heisenberg { m } => heisenberg(*m),
            Builtin::Cone { child, s_range } => {
                let base = ManifoldSpec::builtin(child);
                let mut cone = cone_metric(&base, *s_range);
                cone.builtin = Some(b.clone());
                cone
            }
        }
    }

    pub fn from_name(name: &str) -> Result<ManifoldSpec> {
        Ok(ManifoldSpec::builtin(&Builtin::parse(name)?))
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim && x.iter().zip(&self.domain).all(|(v, iv)| iv.contains(*v))
    }

    pub fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::InvalidArgument(format!(
                "point has {} coordinates, manifold dimension is {}",
                x.len(),
                self.dim
            )));
        }
        if !self.contains(x) {
            return Err(Error::DomainViolation { point: x.to_vec() });
        }
        Ok(())
    }

    /// Metric matrix at `x` without domain or definiteness checks.
    pub fn metric_at(&self, x: &[f64]) -> Mat {
        let n = self.dim;
        let mut g = Mat::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = self.metric[i][j].eval(x);
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        g
    }

    /// Frame fields at `x` as the columns of a matrix (coordinate components).
    pub fn frame_at(&self, x: &[f64]) -> Option<Mat> {
        let frame = self.frame.as_ref()?;
        let n = self.dim;
        Some(Mat::from_fn(n, n, |k, a| frame[a][k].eval(x)))
    }

    /// Origin where the domain allows, else 1, else an interior point of
    /// each interval.
    pub fn default_base(&self) -> Vec<f64> {
        self.domain
            .iter()
            .map(|iv| {
                if iv.contains(0.0) {
                    0.0
                } else if iv.contains(1.0) {
                    1.0
                } else {
                    let (lo, hi) = iv.sampling_range();
                    0.5 * (lo + hi)
                }
            })
            .collect()
    }

    /// Uniform random point in the finite sampling box of the domain.
    pub fn sample_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.domain
            .iter()
            .map(|iv| {
                let (lo, hi) = iv.sampling_range();
                rng.gen_range(lo..hi)
            })
            .collect()
    }

    /// Structural checks: arity, symmetry, frame shape. Numeric checks that
    /// need random points live in [`ManifoldSpec::validate_numeric`].
    pub fn validate_shape(&self) -> Result<()> {
        let n = self.dim;
        if n == 0 {
            return Err(Error::InvalidSpec("dimension must be positive".into()));
        }
        if self.coords.len() != n || self.domain.len() != n {
            return Err(Error::InvalidSpec("coords/domain length must equal dim".into()));
        }
        if self.metric.len() != n || self.metric.iter().any(|row| row.len() != n) {
            return Err(Error::InvalidSpec(format!("metric must be {n}x{n}")));
        }
        for row in &self.metric {
            for e in row {
                if e.max_var().is_some_and(|v| v >= n) {
                    return Err(Error::InvalidSpec("metric references an undeclared variable".into()));
                }
            }
        }
        if let Some(frame) = &self.frame {
            if frame.len() != n || frame.iter().any(|f| f.len() != n) {
                return Err(Error::InvalidSpec(format!("frame must contain {n} fields of length {n}")));
            }
        }
        for iv in &self.domain {
            if !(iv.lo < iv.hi) {
                return Err(Error::InvalidSpec("empty domain interval".into()));
            }
        }
        Ok(())
    }

    /// Symmetry (structural, else at `samples` random points within 1e-12),
    /// positive definiteness, and frame orthonormality within 1e-10.
    pub fn validate_numeric<R: Rng + ?Sized>(&self, rng: &mut R, samples: usize) -> Result<()> {
        let n = self.dim;
        let structurally_symmetric =
            (0..n).all(|i| (0..n).all(|j| self.metric[i][j] == self.metric[j][i]));
        for _ in 0..samples {
            let x = self.sample_point(rng);
            if !structurally_symmetric {
                for i in 0..n {
                    for j in (i + 1)..n {
                        let a = self.metric[i][j].eval(&x);
                        let b = self.metric[j][i].eval(&x);
                        if !((a - b).abs() <= 1e-12 * (1.0 + a.abs())) {
                            return Err(Error::InvalidSpec(format!(
                                "metric not symmetric: g[{i}][{j}]={a} but g[{j}][{i}]={b} at {x:?}"
                            )));
                        }
                    }
                }
            }
            let g = crate::geometry::eval_metric(self, &x)?;
            if let Some(e) = self.frame_at(&x) {
                let defect = (e.transpose() * &g * &e - Mat::identity(n, n)).amax();
                if !(defect <= 1e-10) {
                    return Err(Error::FrameNotOrthonormal { defect });
                }
            }
        }
        Ok(())
    }
}

fn indexed_names(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

fn diagonal(n: usize, entry: Expr) -> Vec<Vec<Expr>> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { entry.clone() } else { Expr::zero() }).collect())
        .collect()
}

fn scaled_coordinate_frame(n: usize, scale: Expr) -> Vec<Vec<Expr>> {
    diagonal(n, scale)
}

fn sum_of_squares(n: usize) -> Expr {
    (0..n).fold(Expr::zero(), |acc, i| acc + Expr::var(i).powi(2))
}

pub fn euclidean(n: usize) -> ManifoldSpec {
    ManifoldSpec {
        name: format!("euclidean:{n}"),
        dim: n,
        coords: indexed_names("x", n),
        metric: diagonal(n, Expr::one()),
        frame: Some(diagonal(n, Expr::one())),
        domain: vec![Interval::REAL_LINE; n],
        builtin: Some(Builtin::Euclidean { n }),
    }
}

/// g = 4R² / (1 + |u|²)² δ in the stereographic chart.
pub fn sphere(n: usize, radius: f64) -> ManifoldSpec {
    let denom = Expr::one() + sum_of_squares(n);
    let conformal = Expr::num(4.0 * radius * radius) / denom.clone().powi(2);
    let frame_scale = denom / Expr::num(2.0 * radius);
    ManifoldSpec {
        name: format!("sphere:{n}:radius={radius}"),
        dim: n,
        coords: indexed_names("x", n),
        metric: diagonal(n, conformal),
        frame: Some(scaled_coordinate_frame(n, frame_scale)),
        domain: vec![Interval::REAL_LINE; n],
        builtin: Some(Builtin::Sphere { n, radius }),
    }
}

/// Upper half-space: g = δ / x_n², x_n > 0.
pub fn hyperbolic(n: usize) -> ManifoldSpec {
    let last = Expr::var(n - 1);
    let mut domain = vec![Interval::REAL_LINE; n];
    domain[n - 1] = Interval::new(0.0, f64::INFINITY);
    ManifoldSpec {
        name: format!("hyperbolic:{n}"),
        dim: n,
        coords: indexed_names("x", n),
        metric: diagonal(n, Expr::one() / last.clone().powi(2)),
        frame: Some(scaled_coordinate_frame(n, last)),
        domain,
        builtin: Some(Builtin::Hyperbolic { n }),
    }
}

/// Heisenberg group H^m on coordinates (x1, y1, ..., xm, ym, z) with
/// X_i = ∂x_i - y_i ∂z, Y_i = ∂y_i + x_i ∂z, Z = ∂z orthonormal. The metric
/// is the square sum of the dual coframe dx_i, dy_i, dz + Σ(y_i dx_i - x_i dy_i).
pub fn heisenberg(m: usize) -> ManifoldSpec {
    let n = 2 * m + 1;
    let coords: Vec<String> = if m == 1 {
        vec!["x".into(), "y".into(), "z".into()]
    } else {
        let mut c = Vec::with_capacity(n);
        for i in 1..=m {
            c.push(format!("x{i}"));
            c.push(format!("y{i}"));
        }
        c.push("z".into());
        c
    };
    let xi = |i: usize| 2 * i;
    let yi = |i: usize| 2 * i + 1;
    let z = n - 1;
    // Coefficients of the contact coframe θ = dz + Σ (y_i dx_i - x_i dy_i).
    let mut theta = vec![Expr::zero(); n];
    for i in 0..m {
        theta[xi(i)] = Expr::var(yi(i));
        theta[yi(i)] = -Expr::var(xi(i));
    }
    theta[z] = Expr::one();
    let metric = (0..n)
        .map(|a| {
            (0..n)
                .map(|b| {
                    let flat = if a == b && a != z { Expr::one() } else { Expr::zero() };
                    flat + theta[a].clone() * theta[b].clone()
                })
                .collect()
        })
        .collect();
    let mut frame = Vec::with_capacity(n);
    for i in 0..m {
        let mut fx = vec![Expr::zero(); n];
        fx[xi(i)] = Expr::one();
        fx[z] = -Expr::var(yi(i));
        let mut fy = vec![Expr::zero(); n];
        fy[yi(i)] = Expr::one();
        fy[z] = Expr::var(xi(i));
        frame.push(fx);
        frame.push(fy);
    }
    let mut fz = vec![Expr::zero(); n];
    fz[z] = Expr::one();
    frame.push(fz);
    ManifoldSpec {
        name: format!("heisenberg:m={m}"),
        dim: n,
        coords,
        metric,
        frame: Some(frame),
        domain: vec![Interval::REAL_LINE; n],
        builtin: Some(Builtin::Heisenberg { m }),
    }
}

/// Warped product s²g + ds² over `base`, with the cone coordinate `s`
/// appended last and restricted to `s_range`.
pub fn cone_metric(base: &ManifoldSpec, s_range: Interval) -> ManifoldSpec {
    let n = base.dim;
    let s = Expr::var(n);
    let s2 = s.clone().powi(2);
    let mut metric = Vec::with_capacity(n + 1);
    for i in 0..n {
        let mut row: Vec<Expr> = (0..n).map(|j| s2.clone() * base.metric[i][j].clone()).collect();
        row.push(Expr::zero());
        metric.push(row);
    }
    let mut last = vec![Expr::zero(); n];
    last.push(Expr::one());
    metric.push(last);
    let frame = base.frame.as_ref().map(|fields| {
        let mut out: Vec<Vec<Expr>> = fields
            .iter()
            .map(|f| {
                let mut v: Vec<Expr> = f.iter().map(|c| c.clone() / s.clone()).collect();
                v.push(Expr::zero());
                v
            })
            .collect();
        let mut ds = vec![Expr::zero(); n];
        ds.push(Expr::one());
        out.push(ds);
        out
    });
    let mut coords = base.coords.clone();
    coords.push("s".into());
    let mut domain = base.domain.clone();
    domain.push(s_range);
    ManifoldSpec {
        name: format!("cone:{}", base.name),
        dim: n + 1,
        coords,
        metric,
        frame,
        domain,
        builtin: base
            .builtin
            .as_ref()
            .map(|b| Builtin::Cone { child: Box::new(b.clone()), s_range }),
    }
}
