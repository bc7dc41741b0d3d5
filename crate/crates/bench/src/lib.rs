//! Fixtures shared by the benchmarks.

use rollhol::curve::Segment;
use rollhol::CurvePath;

/// A closed two-harmonic loop in three coordinates.
pub fn wiggle(steps: usize) -> CurvePath {
    let seg = Segment::Trig {
        center: vec![0.1, -0.2, 0.3],
        sin: vec![vec![0.3, 0.2, -0.25], vec![0.05, -0.04, 0.03]],
        cos: vec![vec![-0.15, 0.25, 0.2], vec![0.02, 0.03, -0.05]],
    };
    CurvePath::new(vec![seg], true).expect("trig loop is closed").with_steps(steps)
}
