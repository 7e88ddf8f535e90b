use thiserror::Error;

/// Crate-wide error type.
#[derive(Error, Debug)]
pub enum Error {
    /// Invalid problem description (bad dimensions, bad grid, malformed input).
    #[error("configuration error: {0}")]
    Config(String),

    /// A hypothesis of an operation is not met (e.g. a structural restriction
    /// on the coefficients required by a solvability criterion).
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// A required positive-definiteness condition failed during backward
    /// integration. Carries the first grid time at which it was detected.
    #[error("solvability failure at t = {time}: {what}")]
    Solvability { time: f64, what: String },

    /// Non-finite or exploding values during integration or simulation.
    #[error("divergence at t = {time}: {what}")]
    Divergence { time: f64, what: String },

    /// Two solution objects were produced on different grids.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// A trajectory bundle does not contain a path the operation needs.
    #[error("missing path: {0}")]
    MissingPath(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Process exit code contract used by the CLI: 1 usage/config,
    /// 2 solvability, 3 verification failure (assigned by the caller).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Solvability { .. } | Error::Divergence { .. } => 2,
            _ => 1,
        }
    }
}
