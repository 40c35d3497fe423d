use std::path::PathBuf;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image decode error at {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("font {font_id}: missing glyph(s) for {missing}")]
    MissingGlyph { font_id: String, missing: String },

    #[error("manifest is empty")]
    EmptyManifest,

    #[error("corpus is empty after {stage}")]
    EmptyCorpus { stage: String },

    #[error("label {0:?} has zero support")]
    ZeroSupport(String),

    #[error("no positive labels")]
    NoPositiveLabels,

    #[error("unknown label {0:?}")]
    UnknownLabel(String),

    #[error("invalid character {0:?}; expected A-Z")]
    InvalidChar(char),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite loss at iteration {iteration}: {detail}")]
    NonFinite { iteration: usize, detail: String },

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
