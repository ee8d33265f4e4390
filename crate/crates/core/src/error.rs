use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("unknown classical label `{0}`")]
    UnknownLabel(String),

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("cannot jump from label `{label}`: every candidate weight is zero")]
    NullJump { label: String },

    #[error("positivity violated at t = {time}: min eigenvalue {min_eigenvalue:e} for label {label}")]
    Positivity {
        time: f64,
        label: usize,
        min_eigenvalue: f64,
    },

    #[error("unsupported: {0}")]
    Unsupported(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
