use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{context}: {source}")]
    Json { context: String, source: serde_json::Error },
    #[error("{context}: line {line}: {message}")]
    Parse { context: String, line: usize, message: String },
    #[error("{0}")]
    Format(String),
    #[error("checksum mismatch for {0}")]
    Checksum(PathBuf),
    #[error(transparent)]
    Core(#[from] rigforge_core::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json { context: context.into(), source }
    }

    pub(crate) fn parse(context: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse { context: context.into(), line, message: message.into() }
    }

    /// Whether the failure came from a NaN or infinity in the numerics.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Core(rigforge_core::Error::NonFinite(_)))
    }
}
