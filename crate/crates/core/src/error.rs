//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix not positive definite after {retries} jitter retries (last jitter {last_jitter:.3e})")]
    NotPositiveDefinite { retries: usize, last_jitter: f64 },

    #[error("singular triangular matrix: zero diagonal at row {0}")]
    SingularMatrix(usize),

    #[error("numerical divergence: {0}")]
    NumericalDivergence(String),

    #[error("shape mismatch: {0}")]
    ShapeError(String),

    #[error("index out of bounds: {0}")]
    IndexError(String),

    #[error("format error: {0}")]
    FormatError(String),

    #[error("empty training set: no observed pixels")]
    EmptyTrainingSet,

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error("batch too small: got {0}, training mode needs at least 2 samples")]
    BatchTooSmall(usize),

    #[error("state error: {0}")]
    StateError(String),

    #[error("variant {0} needs a trained feature extractor")]
    MissingExtractor(String),

    #[error("config error: {0}")]
    ConfigError(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 for data/usage problems inside the
    /// library, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NotPositiveDefinite { .. }
            | Error::SingularMatrix(_)
            | Error::NumericalDivergence(_) => 3,
            _ => 2,
        }
    }
}
