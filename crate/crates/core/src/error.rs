use std::path::PathBuf;

/// Errors raised across the toolkit.
///
/// Variants are grouped so a front end can map them onto exit categories
/// with [`Error::category`].
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("wav error: {0}")]
    Wav(String),
    #[error("unsupported encoding: {0}")]
    UnsupportedEncoding(String),
    #[error("multichannel unsupported ({0} channels)")]
    Multichannel(u16),
    #[error("input too short: need at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("not enough candidates: requested {requested}, only {available} rows above the power threshold")]
    NotEnoughCandidates { requested: usize, available: usize },
    #[error("no spectral change between input and output")]
    NoSpectralChange,
    #[error("corpus too small: {0}")]
    CorpusTooSmall(String),
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64 },
    #[error("schema violation at `{field}`: {message}")]
    Schema { field: String, message: String },
    #[error("version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("non-finite value in {0}")]
    NonFinite(String),
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Io,
    Validation,
    Numerical,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Io { .. } | Error::Wav(_) => ErrorCategory::Io,
            Error::Diverged { .. } | Error::NonFinite(_) | Error::NoSpectralChange => {
                ErrorCategory::Numerical
            }
            _ => ErrorCategory::Validation,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
