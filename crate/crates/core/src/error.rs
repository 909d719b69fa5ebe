use thiserror::Error;

#[derive(Debug, Error)]
pub enum BemError {
    #[error("curve is not simple: {0}")]
    NonSimpleCurve(String),
    #[error("degenerate element: {0}")]
    DegenerateElement(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("degree {degree} out of range 0..={max}")]
    DegreeOutOfRange { degree: usize, max: usize },
    #[error("mesh and space do not match: {0}")]
    MeshMismatch(String),
    #[error("point lies on the boundary: {0}")]
    PointOnBoundary(String),
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("right-hand side is not mean-zero: <f, 1> = {0:e}")]
    RhsNotMeanZero(f64),
    #[error("singular or ill-conditioned system: {0}")]
    SingularSystem(String),
    #[error("quadrature failure: {0}")]
    Quadrature(String),
    #[error("invalid configuration field `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, BemError>;
