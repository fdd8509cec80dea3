use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// Malformed JSON or CSV; `line` is 1-based.
    #[error("{}:{line}: {msg}", path.display())]
    Syntax { path: PathBuf, line: usize, msg: String },
    /// Well-formed input whose content is invalid.
    #[error("{}: {record}: {msg}", path.display())]
    Record { path: PathBuf, record: String, msg: String },
    #[error(transparent)]
    Core(#[from] fracal_core::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io { path: path.to_path_buf(), source }
    }

    pub(crate) fn json(path: &Path, line_offset: usize, e: serde_json::Error) -> Self {
        Error::Syntax { path: path.to_path_buf(), line: line_offset + e.line(), msg: e.to_string() }
    }

    pub(crate) fn record(path: &Path, record: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Record { path: path.to_path_buf(), record: record.into(), msg: msg.into() }
    }
}
