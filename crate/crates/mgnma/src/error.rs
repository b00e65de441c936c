use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: file not found")]
    NotFound { path: PathBuf },
    #[error("bad magic {found:?}, expected \"MGF1\"")]
    BadMagic { found: [u8; 4] },
    #[error("truncated {what}: need {expected} bytes, have {found}")]
    Truncated {
        what: &'static str,
        expected: u64,
        found: u64,
    },
    #[error("{extra} unexpected bytes after payload")]
    TrailingBytes { extra: u64 },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("label {value} at row {row}, column {col} outside [0, 1]")]
    LabelOutOfRange { row: usize, col: usize, value: f32 },
    #[error("track name is not valid UTF-8")]
    InvalidName,
    #[error("{path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("gradient check failed for {0}")]
    GradCheck(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] mgnma_core::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        let path = path.into();
        if source.kind() == io::ErrorKind::NotFound {
            Error::NotFound { path }
        } else {
            Error::Io { path, source }
        }
    }

    /// Short stable identifier for machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        use mgnma_core::Error as C;
        match self {
            Error::Io { .. } => "io",
            Error::NotFound { .. } => "not_found",
            Error::BadMagic { .. } => "bad_magic",
            Error::Truncated { .. } => "truncated",
            Error::TrailingBytes { .. } => "trailing_bytes",
            Error::NonFinite { .. } => "non_finite",
            Error::LabelOutOfRange { .. } => "label_out_of_range",
            Error::InvalidName => "invalid_name",
            Error::Manifest { .. } => "manifest",
            Error::Json { .. } => "json",
            Error::Checkpoint(_) => "checkpoint",
            Error::Config(_) => "config",
            Error::GradCheck(_) => "gradcheck",
            Error::Core(e) => match e {
                C::NumericalAbort { .. } => "numerical_abort",
                C::MissingModality(_) => "missing_modality",
                C::MissingSplit(_) => "missing_split",
                C::MissingVideo(_) => "missing_video",
                C::InvalidConfig(_) => "config",
                C::CoverageMismatch(_) => "coverage_mismatch",
                C::NonFinite(_) => "non_finite",
                C::LabelOutOfRange { .. } => "label_out_of_range",
                _ => "invalid_data",
            },
        }
    }
}
