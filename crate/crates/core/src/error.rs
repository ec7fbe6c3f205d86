use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied parameter is outside its admissible range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A formula was evaluated outside the region where it is defined.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("unknown problem id `{0}` (expected paper-quadratic, quadratic:<path> or lasso:<path>)")]
    UnknownProblem(String),

    /// The iteration produced a non-finite value or left the divergence ball.
    #[error("divergence at iteration {iteration}: {detail}")]
    Divergence { iteration: u64, detail: String },

    #[error("missing optimum: {0}")]
    MissingOptimum(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("reference solve did not converge: {0}")]
    NoConvergence(String),

    #[error("malformed trajectory file: {0}")]
    Malformed(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
