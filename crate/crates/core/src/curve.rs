//! Piecewise-smooth curves in a chart, parametrized segment-wise over [0, 1].

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{parse_expr, Expr};

pub const DEFAULT_STEPS: usize = 512;
const JOIN_TOL: f64 = 1e-12;

#[derive(Clone, Debug)]
pub enum Segment {
    /// Straight coordinate segment.
    Linear { from: Vec<f64>, to: Vec<f64> },
    /// Coordinate expressions in the single variable `t` (index 0).
    Expr { coords: Vec<Expr>, velocity: Vec<Expr> },
    /// Closed trigonometric loop
    /// x(t) = center + Σ_k sin_k·sin(2πkt) + cos_k·(cos(2πkt) - 1).
    Trig { center: Vec<f64>, sin: Vec<Vec<f64>>, cos: Vec<Vec<f64>> },
    /// The inner segment traversed backwards.
    Reversed(Box<Segment>),
    /// The first `dims` coordinates of the inner segment.
    Projected { inner: Box<Segment>, dims: usize },
}

impl Segment {
    pub fn expr(coords: Vec<Expr>) -> Segment {
        let velocity = coords.iter().map(|c| c.diff(0)).collect();
        Segment::Expr { coords, velocity }
    }

    pub fn dim(&self) -> usize {
        match self {
            Segment::Linear { from, .. } => from.len(),
            Segment::Expr { coords, .. } => coords.len(),
            Segment::Trig { center, .. } => center.len(),
            Segment::Reversed(inner) => inner.dim(),
            Segment::Projected { dims, .. } => *dims,
        }
    }

    pub fn point(&self, t: f64, out: &mut [f64]) {
        match self {
            Segment::Linear { from, to } => {
                for k in 0..out.len() {
                    out[k] = from[k] + t * (to[k] - from[k]);
                }
            }
            Segment::Expr { coords, .. } => {
                for (o, c) in out.iter_mut().zip(coords) {
                    *o = c.eval(&[t]);
                }
            }
            Segment::Trig { center, sin, cos } => {
                out.copy_from_slice(center);
                for (h, (a, b)) in sin.iter().zip(cos).enumerate() {
                    let w = TAU * (h + 1) as f64;
                    let (s, c) = (w * t).sin_cos();
                    for k in 0..out.len() {
                        out[k] += a[k] * s + b[k] * (c - 1.0);
                    }
                }
            }
            Segment::Reversed(inner) => inner.point(1.0 - t, out),
            Segment::Projected { inner, dims } => {
                let mut full = vec![0.0; inner.dim()];
                inner.point(t, &mut full);
                out.copy_from_slice(&full[..*dims]);
            }
        }
    }

    pub fn velocity(&self, t: f64, out: &mut [f64]) {
        match self {
            Segment::Linear { from, to } => {
                for k in 0..out.len() {
                    out[k] = to[k] - from[k];
                }
            }
            Segment::Expr { velocity, .. } => {
                for (o, v) in out.iter_mut().zip(velocity) {
                    *o = v.eval(&[t]);
                }
            }
            Segment::Trig { sin, cos, .. } => {
                out.fill(0.0);
                for (h, (a, b)) in sin.iter().zip(cos).enumerate() {
                    let w = TAU * (h + 1) as f64;
                    let (s, c) = (w * t).sin_cos();
                    for k in 0..out.len() {
                        out[k] += w * (a[k] * c - b[k] * s);
                    }
                }
            }
            Segment::Reversed(inner) => {
                inner.velocity(1.0 - t, out);
                out.iter_mut().for_each(|v| *v = -*v);
            }
            Segment::Projected { inner, dims } => {
                let mut full = vec![0.0; inner.dim()];
                inner.velocity(t, &mut full);
                out.copy_from_slice(&full[..*dims]);
            }
        }
    }

    pub fn start(&self) -> Vec<f64> {
        let mut p = vec![0.0; self.dim()];
        self.point(0.0, &mut p);
        p
    }

    pub fn end(&self) -> Vec<f64> {
        let mut p = vec![0.0; self.dim()];
        self.point(1.0, &mut p);
        p
    }
}

#[derive(Clone, Debug)]
pub struct CurvePath {
    pub segments: Vec<Segment>,
    pub steps_per_segment: usize,
    pub is_loop: bool,
}

fn max_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max)
}

impl CurvePath {
    pub fn new(segments: Vec<Segment>, is_loop: bool) -> Result<CurvePath> {
        let path = CurvePath { segments, steps_per_segment: DEFAULT_STEPS, is_loop };
        path.validate()?;
        Ok(path)
    }

    /// Piecewise-linear path through `points`.
    pub fn polyline(points: &[Vec<f64>], is_loop: bool) -> Result<CurvePath> {
        if points.is_empty() {
            return Err(Error::InvalidCurve("polyline needs at least one point".into()));
        }
        let segments = if points.len() == 1 {
            vec![Segment::Linear { from: points[0].clone(), to: points[0].clone() }]
        } else {
            points
                .windows(2)
                .map(|w| Segment::Linear { from: w[0].clone(), to: w[1].clone() })
                .collect()
        };
        CurvePath::new(segments, is_loop)
    }

    pub fn constant(x: &[f64]) -> CurvePath {
        CurvePath {
            segments: vec![Segment::Linear { from: x.to_vec(), to: x.to_vec() }],
            steps_per_segment: DEFAULT_STEPS,
            is_loop: true,
        }
    }

    /// Coordinate rectangle with one corner at `x`, traversed
    /// x → x+δe_i → x+δe_i+δe_j → x+δe_j → x.
    pub fn corner_rectangle(x: &[f64], i: usize, j: usize, delta: f64) -> CurvePath {
        let shift = |di: f64, dj: f64| {
            let mut p = x.to_vec();
            p[i] += di;
            p[j] += dj;
            p
        };
        let pts = [shift(0.0, 0.0), shift(delta, 0.0), shift(delta, delta), shift(0.0, delta), shift(0.0, 0.0)];
        CurvePath::polyline(&pts, true).expect("rectangle is closed")
    }

    /// Square of side δ centred at `x` in the (i, j) plane, positively
    /// oriented, reached from `x` along a spoke to the midpoint of its lower
    /// edge and back. The symmetric placement cancels the third-order term of
    /// the holonomy expansion.
    pub fn centered_square(x: &[f64], i: usize, j: usize, delta: f64) -> CurvePath {
        let h = 0.5 * delta;
        let shift = |di: f64, dj: f64| {
            let mut p = x.to_vec();
            p[i] += di;
            p[j] += dj;
            p
        };
        let pts = [
            shift(0.0, 0.0),
            shift(0.0, -h),
            shift(h, -h),
            shift(h, h),
            shift(-h, h),
            shift(-h, -h),
            shift(0.0, -h),
            shift(0.0, 0.0),
        ];
        CurvePath::polyline(&pts, true).expect("square is closed")
    }

    pub fn with_steps(mut self, steps: usize) -> CurvePath {
        self.steps_per_segment = steps;
        self
    }

    pub fn dim(&self) -> usize {
        self.segments.first().map_or(0, Segment::dim)
    }

    pub fn start(&self) -> Vec<f64> {
        self.segments[0].start()
    }

    pub fn end(&self) -> Vec<f64> {
        self.segments[self.segments.len() - 1].end()
    }

    pub fn validate(&self) -> Result<()> {
        if self.segments.is_empty() {
            return Err(Error::InvalidCurve("no segments".into()));
        }
        if self.steps_per_segment == 0 {
            return Err(Error::StepUnderflow);
        }
        let n = self.segments[0].dim();
        if self.segments.iter().any(|s| s.dim() != n) {
            return Err(Error::InvalidCurve("segments disagree on dimension".into()));
        }
        for (k, pair) in self.segments.windows(2).enumerate() {
            let gap = max_gap(&pair[0].end(), &pair[1].start());
            if !(gap <= JOIN_TOL) {
                return Err(Error::InvalidCurve(format!(
                    "segment {k} ends {gap:e} away from the start of segment {}",
                    k + 1
                )));
            }
        }
        if self.is_loop {
            let gap = max_gap(&self.start(), &self.end());
            if !(gap <= JOIN_TOL) {
                return Err(Error::InvalidCurve(format!("loop is not closed (gap {gap:e})")));
            }
        }
        Ok(())
    }

    /// Coordinate projection onto the first `dims` coordinates.
    pub fn projected(&self, dims: usize) -> CurvePath {
        CurvePath {
            segments: self
                .segments
                .iter()
                .map(|s| Segment::Projected { inner: Box::new(s.clone()), dims })
                .collect(),
            steps_per_segment: self.steps_per_segment,
            is_loop: self.is_loop,
        }
    }

    /// Same trace, opposite direction.
    pub fn reversed(&self) -> CurvePath {
        CurvePath {
            segments: self.segments.iter().rev().map(|s| Segment::Reversed(Box::new(s.clone()))).collect(),
            steps_per_segment: self.steps_per_segment,
            is_loop: self.is_loop,
        }
    }

    /// `self` followed by `next`.
    pub fn then(&self, next: &CurvePath) -> Result<CurvePath> {
        let mut segments = self.segments.clone();
        segments.extend(next.segments.iter().cloned());
        let joined = CurvePath { segments, steps_per_segment: self.steps_per_segment, is_loop: false };
        joined.validate()?;
        let closed = max_gap(&joined.start(), &joined.end()) <= JOIN_TOL;
        Ok(CurvePath { is_loop: closed, ..joined })
    }

    /// Points at every integration node, segment by segment.
    pub fn sample_nodes(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        let h = 1.0 / self.steps_per_segment as f64;
        let mut out = Vec::with_capacity(self.segments.len() * self.steps_per_segment + 1);
        for (k, seg) in self.segments.iter().enumerate() {
            let first = if k == 0 { 0 } else { 1 };
            for s in first..=self.steps_per_segment {
                let mut p = vec![0.0; n];
                seg.point(s as f64 * h, &mut p);
                out.push(p);
            }
        }
        out
    }
}

/// JSON form of a curve file: segments listed in order, each either
/// `{"polyline": [[..], ..]}` or `{"coords": ["expr in t", ..]}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CurveFile {
    pub segments: Vec<SegmentFile>,
    #[serde(default)]
    pub steps_per_segment: Option<usize>,
    #[serde(default)]
    pub is_loop: Option<bool>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SegmentFile {
    Polyline { polyline: Vec<Vec<f64>> },
    Coords { coords: Vec<String> },
}

impl CurveFile {
    pub fn to_path(&self) -> Result<CurvePath> {
        let mut segments = Vec::new();
        for seg in &self.segments {
            match seg {
                SegmentFile::Polyline { polyline } => {
                    if polyline.len() < 2 {
                        return Err(Error::InvalidCurve("polyline segment needs two points".into()));
                    }
                    for w in polyline.windows(2) {
                        segments.push(Segment::Linear { from: w[0].clone(), to: w[1].clone() });
                    }
                }
                SegmentFile::Coords { coords } => {
                    let exprs = coords.iter().map(|c| parse_expr(c, &["t"])).collect::<Result<Vec<_>>>()?;
                    segments.push(Segment::expr(exprs));
                }
            }
        }
        if segments.is_empty() {
            return Err(Error::InvalidCurve("no segments".into()));
        }
        let mut path = CurvePath { segments, steps_per_segment: DEFAULT_STEPS, is_loop: false };
        if let Some(steps) = self.steps_per_segment {
            path.steps_per_segment = steps;
        }
        let closed = max_gap(&path.start(), &path.end()) <= JOIN_TOL;
        path.is_loop = self.is_loop.unwrap_or(closed);
        path.validate()?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polyline_joins_and_closure() {
        let sq = CurvePath::corner_rectangle(&[0.0, 0.0], 0, 1, 1.0);
        assert!(sq.is_loop);
        assert_eq!(sq.segments.len(), 4);
        let open = CurvePath::polyline(&[vec![0.0], vec![1.0]], true);
        assert!(matches!(open, Err(Error::InvalidCurve(_))));
    }

    #[test]
    fn disjoint_segments_rejected() {
        let segs = vec![
            Segment::Linear { from: vec![0.0], to: vec![1.0] },
            Segment::Linear { from: vec![1.1], to: vec![2.0] },
        ];
        assert!(CurvePath::new(segs, false).is_err());
    }

    #[test]
    fn reversed_traces_backwards() {
        let c = CurvePath::polyline(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0, 2.0]], false).unwrap();
        let r = c.reversed();
        assert_eq!(r.start(), vec![1.0, 2.0]);
        assert_eq!(r.end(), vec![0.0, 0.0]);
        let mut v = [0.0; 2];
        r.segments[0].velocity(0.3, &mut v);
        assert_eq!(v, [0.0, -2.0]);
    }

    #[test]
    fn trig_loop_closes_and_velocity_matches_difference() {
        let seg = Segment::Trig {
            center: vec![0.2, -0.1],
            sin: vec![vec![0.1, 0.05], vec![0.02, -0.03]],
            cos: vec![vec![-0.04, 0.07], vec![0.01, 0.02]],
        };
        assert!(max_gap(&seg.start(), &seg.end()) < 1e-15);
        let (t, h) = (0.37, 1e-6);
        let (mut a, mut b, mut v) = ([0.0; 2], [0.0; 2], [0.0; 2]);
        seg.point(t + h, &mut a);
        seg.point(t - h, &mut b);
        seg.velocity(t, &mut v);
        for k in 0..2 {
            assert!(((a[k] - b[k]) / (2.0 * h) - v[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn curve_file_with_expressions() {
        let json = r#"{"segments":[{"coords":["cos(2*pi*t)","sin(2*pi*t)"]}]}"#;
        let file: CurveFile = serde_json::from_str(json).unwrap();
        let path = file.to_path().unwrap();
        assert!(path.is_loop);
        let mut v = [0.0; 2];
        path.segments[0].velocity(0.0, &mut v);
        assert!((v[1] - std::f64::consts::TAU).abs() < 1e-12);
    }

    #[test]
    fn centered_square_is_closed_and_centered() {
        let c = CurvePath::centered_square(&[1.0, 2.0, 3.0], 0, 2, 0.2);
        assert!(c.is_loop);
        let nodes = c.sample_nodes();
        let mean_i: f64 = nodes.iter().map(|p| p[0]).sum::<f64>() / nodes.len() as f64;
        assert!((mean_i - 1.0).abs() < 1e-12);
        assert!(nodes.iter().all(|p| p[1] == 2.0));
    }
}
