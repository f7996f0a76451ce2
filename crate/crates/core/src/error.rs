use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed file: {0}")]
    Format(String),

    #[error("unsupported channel count {0}: only mono audio is accepted")]
    UnsupportedChannels(u16),

    #[error("unsupported codec: {0}")]
    UnsupportedCodec(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("index {index} out of range for {len} entries")]
    Index { index: usize, len: usize },

    #[error("invalid bandwidth flag {0}: expected 0 (wideband) or 1 (narrowband)")]
    Flag(u32),

    #[error("variant mismatch: {0}")]
    Variant(String),

    #[error("corrupt file: {0}")]
    Corruption(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("signal of {samples} samples is shorter than one {frame_len}-sample frame")]
    EmptyFeature { samples: usize, frame_len: usize },

    #[error("error rate undefined for an empty reference")]
    UndefinedRate,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the error stems from user-supplied configuration rather than
    /// data or numerics. The CLI maps these to a usage exit code.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Variant(_) | Error::Flag(_))
    }
}
