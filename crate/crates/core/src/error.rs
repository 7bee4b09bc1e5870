use alloc::boxed::Box;
use alloc::string::String;

use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Input data violates a structural invariant.
    #[error("validation error: {0}")]
    Validation(String),
    /// A caller-supplied parameter is out of range.
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("no embedding row for sentence {0}")]
    MissingEmbedding(u64),
    #[error("{stage}: non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss {
        stage: &'static str,
        epoch: usize,
        batch: usize,
    },
    #[error("fold {fold}, seed {seed}: {source}")]
    Cell {
        fold: usize,
        seed: u64,
        source: Box<Error>,
    },
}

impl Error {
    /// True for errors caused by bad input rather than a failed computation.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Validation(_) | Error::Argument(_) | Error::Dimension(_) => true,
            Error::MissingEmbedding(_) => true,
            Error::NonFiniteLoss { .. } => false,
            Error::Cell { source, .. } => source.is_validation(),
        }
    }
}
