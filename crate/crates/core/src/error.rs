use std::path::PathBuf;

/// Errors produced anywhere in the toolkit.
///
/// The CLI maps [`Error::is_io`] failures to exit code 2 and everything
/// else to exit code 1.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("contract error: {0}")]
    Contract(String),
    #[error("configuration error: {0}")]
    Config(String),

    #[error("corrupt header: {0}")]
    CorruptHeader(String),
    #[error("truncated blob: expected {expected} bytes, found {found}")]
    TruncatedBlob { expected: usize, found: usize },
    #[error("config mismatch: {0}")]
    ConfigMismatch(String),

    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("malformed manifest row {line}: {reason}")]
    MalformedManifest { line: usize, reason: String },
    #[error("malformed image {}: {reason}", .path.display())]
    MalformedImage { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    /// True for failures caused by the filesystem or by on-disk formats.
    pub fn is_io(&self) -> bool {
        matches!(
            self,
            Error::Io(_)
                | Error::MissingFile(_)
                | Error::MalformedManifest { .. }
                | Error::MalformedImage { .. }
                | Error::CorruptHeader(_)
                | Error::TruncatedBlob { .. }
                | Error::ConfigMismatch(_)
                | Error::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
