use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::model::RatingTriple;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("entry {triple} lies outside the {n}x{m} matrix")]
    OutOfRange { triple: RatingTriple, n: usize, m: usize },

    #[error("duplicate entry at ({}, {}): {triple}", triple.row, triple.col)]
    Duplicate { triple: RatingTriple },

    #[error("non-finite rating value in entry {triple}")]
    NonFinite { triple: RatingTriple },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("metric undefined on an empty dataset")]
    EmptyDataset,

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("malformed model file: {0}")]
    MalformedModel(String),

    #[error("invalid plan: {0}")]
    InvalidPlan(String),

    #[error(transparent)]
    Divergence(#[from] Divergence),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}

/// A non-finite value showed up while updating factors.
#[derive(Debug, Clone, PartialEq, Error)]
#[error(
    "diverged in block ({}, {}) at iteration {iteration}, local entry ({}, {})",
    block.0, block.1, entry.0, entry.1
)]
pub struct Divergence {
    pub block: (usize, usize),
    /// Local (row, col) of the entry being updated.
    pub entry: (usize, usize),
    /// Zero-based inner iteration.
    pub iteration: usize,
}
