use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("singular linear system (condition estimate {condition:e})")]
    Singular { condition: f64 },

    #[error("point projects to infinity")]
    PointAtInfinity,

    #[error("degenerate linear triangulation: {0}")]
    DegenerateTriangulation(String),

    #[error("unsupported camera: {0}")]
    UnsupportedCamera(String),

    #[error("cameras {0} and {1} share a center")]
    DegeneratePair(usize, usize),

    #[error("degenerate SDP: {0}")]
    DegenerateProblem(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("local refinement failed: {0}")]
    RefinementFailed(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}
