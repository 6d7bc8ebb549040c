use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = AmfError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum AmfError {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("format error: {0}")]
    Format(String),

    /// A checkpoint does not fit the target architecture. Carries every
    /// offending parameter name.
    #[error("compatibility error: {reason} [{}]", names.join(", "))]
    Compatibility { reason: String, names: Vec<String> },

    #[error("configuration error: {key}: {reason}")]
    Config { key: String, reason: String },

    #[error("non-finite loss at epoch {epoch}")]
    NonFinite { epoch: usize },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl AmfError {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Self::Shape(msg.into())
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Self::Usage(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Self::Format(msg.into())
    }

    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Self::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config { .. } | Self::Usage(_) => 2,
            Self::Io { .. } | Self::Format(_) | Self::Data(_) => 3,
            Self::Compatibility { .. } | Self::Shape(_) => 4,
            Self::NonFinite { .. } => 5,
        }
    }
}
