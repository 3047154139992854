use std::path::PathBuf;

/// Errors raised anywhere in the separation pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("unknown condition token `{0}`")]
    UnknownCondition(String),

    #[error("prior schema violation: {0}")]
    Schema(String),

    #[error("signal of {len} samples is shorter than one window ({window})")]
    SignalTooShort { len: usize, window: usize },

    #[error("non-finite state at sigma={sigma:.6e}, iteration {iteration}, source {source_index}")]
    NonFinite {
        sigma: f64,
        iteration: usize,
        source_index: usize,
    },

    #[error(
        "divergence at sigma={sigma:.6e}, iteration {iteration}, source {source_index}: \
         norm {norm:.3e} exceeds {limit:.3e}"
    )]
    Divergence {
        sigma: f64,
        iteration: usize,
        source_index: usize,
        norm: f64,
        limit: f64,
    },

    #[error("zero-energy signal: {0}")]
    ZeroEnergy(&'static str),

    #[error("malformed wav file: {0}")]
    MalformedWav(String),

    #[error("unsupported wav format: {0}")]
    UnsupportedWav(String),

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
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by numerical blow-up rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite { .. } | Error::Divergence { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
