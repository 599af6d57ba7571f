use thiserror::Error;

use crate::solver::SolveReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not symmetric positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("expected at most {expected} null mode(s), found {found}")]
    RankDeficient { expected: usize, found: usize },

    #[error("system with {rows} rows exceeds the dense assembly cap of {cap}")]
    TooLarge { rows: usize, cap: usize },

    #[error("local solve failed on patch {patch}: {source}")]
    Patch {
        patch: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("krylov solver did not converge in {} iterations", .0.iterations)]
    NotConverged(Box<SolveReport>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
