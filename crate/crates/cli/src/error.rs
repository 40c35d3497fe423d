use serde::Serialize;
use std::path::PathBuf;
use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] glyphgen::Error),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("server error: {0}")]
    Server(String),
}

/// The JSON object printed to stderr on failure.
#[derive(Debug, Serialize)]
pub struct ErrorReport {
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> &'static str {
        use glyphgen::Error as E;
        match self {
            CliError::Core(e) => match e {
                E::Io { .. } => "io",
                E::Image { .. } => "image",
                E::MissingGlyph { .. } => "missing_glyph",
                E::EmptyManifest => "empty_manifest",
                E::EmptyCorpus { .. } => "empty_corpus",
                E::ZeroSupport(_) => "zero_support",
                E::NoPositiveLabels => "no_positive_labels",
                E::UnknownLabel(_) => "unknown_label",
                E::InvalidChar(_) => "invalid_char",
                E::InvalidArgument(_) => "invalid_argument",
                E::Config(_) => "config",
                E::Shape(_) => "shape",
                E::NonFinite { .. } => "non_finite",
                E::Checkpoint(_) => "checkpoint",
                E::Json(_) => "json",
            },
            CliError::Io { .. } => "io",
            CliError::Config(_) => "config",
            CliError::Server(_) => "server",
        }
    }

    pub fn report(&self) -> ErrorReport {
        ErrorReport {
            kind: self.kind(),
            message: self.to_string(),
        }
    }
}
