use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("state outside admissible region of {frame}: {reason}")]
    Domain { frame: &'static str, reason: String },
    #[error("singular transform: {0}")]
    SingularTransform(String),
    #[error("clock rate undefined: {0}")]
    UndefinedRate(String),
    #[error("singularity: {0}")]
    Singularity(String),
    #[error("no intersection: {0}")]
    NoIntersection(String),
    #[error("no root: {0}")]
    NoRoot(String),
    #[error("frame mismatch: {0} vs {1}")]
    FrameMismatch(&'static str, &'static str),
    #[error("maximum number of steps ({0}) exceeded")]
    MaxSteps(usize),
    #[error("step size underflow at clock time {0}")]
    StepUnderflow(f64),
    #[error("trajectory left the admissible region: {0}")]
    DomainExit(String),
    #[error("no crossing before clock limit {0}")]
    NoCrossing(f64),
    #[error("crossing rejected by section bounds")]
    BoundsRejected,
    #[error("section ordering violated: expected {expected}, hit {hit}")]
    OrderingViolation { expected: String, hit: String },
    #[error("fixed-point iteration did not converge: {0}")]
    NonConvergence(String),
    #[error("constraint violated: {0}")]
    Constraint(String),
    #[error("region escape through face {0}")]
    RegionEscape(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("nonpositive value {0} cannot be fitted on a log scale")]
    NonPositive(f64),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("i/o failure: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
