use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("user position coincides with the base station")]
    ZeroDistance,
    #[error("sampled delay bin {bin} does not fit in {n_subcarriers} subcarriers")]
    DelayOverflow { bin: usize, n_subcarriers: usize },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },
    #[error("similarity is undefined for an all-zero angle-delay profile")]
    ZeroAdp,
    #[error("not a valid container: {0}")]
    Format(String),
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u16, expected: u16 },
    #[error("file truncated: {0}")]
    TruncatedFile(String),
    #[error("{kind} needs at least {needed} paths, got {available}")]
    NotEnoughPaths {
        kind: &'static str,
        needed: usize,
        available: usize,
    },
    #[error("training loss became non-finite at epoch {epoch}; lower the learning rate")]
    DivergedLoss { epoch: usize },
    #[error("frame history is empty")]
    EmptyHistory,
    #[error("no usable neighbors and no frame history to fall back on")]
    EmptyNeighborhood,
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn dims(expected: impl ToString, actual: impl ToString) -> Self {
        Error::DimensionMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
