//! Rolling-connection holonomy of Riemannian manifolds rolling on the unit
//! sphere: transport, holonomy classification, the cone isomorphism, and
//! Sasakian / 3-Sasakian structures.

pub mod connections;
pub mod curve;
pub mod error;
pub mod expr;
pub mod geometry;
pub mod holonomy;
pub mod linalg;
pub mod manifold;
pub mod ode;
pub mod rolling;
pub mod speclang;
pub mod structures;
pub mod transport;

pub use curve::{CurvePath, Segment};
pub use error::{Error, Result};
pub use expr::{parse_expr, Expr};
pub use geometry::{Christoffel, CurvatureEndomorphism, VectorField};
pub use holonomy::{GroupVerdict, HolonomyAlgebra, HolonomyLabel};
pub use linalg::{Mat, Vector};
pub use manifold::{Builtin, Interval, ManifoldSpec};
pub use rolling::{RollingState, RollingTrajectory};
pub use speclang::{resolve_spec, Report};
pub use structures::{InvariantStructure, MatrixField, SasakiStructure};
pub use transport::Connection;
