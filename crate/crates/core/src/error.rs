use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{what} index {index} out of range (limit {limit})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid MDP: {0}")]
    InvalidMdp(String),

    #[error("invalid region: {0}")]
    InvalidRegion(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("chain is not ergodic: {0}")]
    NotErgodic(String),

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("discount too large for this β: {0}")]
    DiscountTooLarge(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("malformed map at row {row}, col {col}: {msg}")]
    MalformedMap { row: usize, col: usize, msg: String },

    #[error("config error at {path}: {msg}")]
    Config { path: String, msg: String },

    #[error("linear program failed: {0}")]
    Lp(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_index(what: &'static str, index: usize, limit: usize) -> Result<()> {
    if index < limit {
        Ok(())
    } else {
        Err(Error::IndexOutOfRange { what, index, limit })
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
