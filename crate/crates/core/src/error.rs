use thiserror::Error;

/// Errors raised by the model, the solvers and the file readers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("state has {found} coordinates, expected {expected}")]
    Dimension { expected: usize, found: usize },

    #[error("coordinate {index} = {value} is outside the positive cone")]
    Domain { index: usize, value: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("singular Newton system at iteration {iteration}")]
    SingularNewton { iteration: usize },

    #[error("estimate undefined: {0}")]
    Undefined(String),

    #[error("inconclusive: {0}")]
    Inconclusive(String),

    #[error("gap too small, reduce exponent (segment length {length:e})")]
    GapTooSmall { length: f64 },

    #[error("refinement aborted at iterate {iterate}: {reason}")]
    RefinementAborted { iterate: usize, reason: String },

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
