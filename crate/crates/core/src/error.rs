use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },

    #[error("unknown identifier `{name}` at offset {offset}")]
    UnknownIdentifier { name: String, offset: usize },

    #[error("expression evaluated to a non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid manifold description: {0}")]
    InvalidSpec(String),

    #[error("point {point:?} lies outside the chart domain")]
    DomainViolation { point: Vec<f64> },

    #[error("metric is not positive definite at {point:?} (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { point: Vec<f64>, min_eigenvalue: f64 },

    #[error("metric is numerically singular at {point:?}")]
    SingularMetric { point: Vec<f64> },

    #[error("frame is not orthonormal (Gram defect {defect:e})")]
    FrameNotOrthonormal { defect: f64 },

    #[error("invalid curve: {0}")]
    InvalidCurve(String),

    #[error("step count must be positive")]
    StepUnderflow,

    #[error("matrix logarithm failed: {0}")]
    LogBranch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no invariant structure: {0}")]
    NoInvariantStructure(String),

    #[error("structure hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("lattice too coarse: {0}")]
    LatticeTooCoarse(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
