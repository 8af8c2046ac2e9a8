use thiserror::Error;

/// Errors produced by the numerical routines in this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("kernel diagonal entry {index} is not strictly positive ({value})")]
    NonPositiveDiagonal { index: usize, value: f64 },

    #[error("symmetric factorization failed even with jitter {jitter:e}")]
    Factorization { jitter: f64 },

    #[error("matrix is not positive semidefinite (eigenvalue {eigenvalue:e})")]
    NotPsd { eigenvalue: f64 },

    /// The ReLU moment series was asked to expand around an overlap it cannot
    /// represent. `pair` indexes the offending entry of the 4x4 block.
    #[error("series does not converge: |correlation{pair:?}| = {value} >= {threshold}")]
    NonConvergent {
        pair: (usize, usize),
        value: f64,
        threshold: f64,
    },

    #[error("{n} training points exceed the materialization cap of {cap}; use streaming mode")]
    MaterializationCap { n: usize, cap: usize },

    #[error("chain diverged at epoch {epoch} (seed {seed}): non-finite weights, reduce dt")]
    Divergence { epoch: u64, seed: u64 },

    #[error("series of length {len} too short, need at least {required}")]
    SeriesTooShort { len: usize, required: usize },

    #[error("series has zero variance")]
    ZeroVariance,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("malformed container: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
