use std::path::PathBuf;

use thiserror::Error;

/// Everything that can go wrong inside the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error in object '{key}': {message}")]
    Schema { key: String, message: String },

    #[error("malformed document at byte {offset}: {message}")]
    Document { offset: usize, message: String },

    #[error("invalid scene graph: {0}")]
    InvalidGraph(String),

    #[error("vocabulary error: {0}")]
    Vocabulary(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite values produced during {phase}")]
    NonFinite { phase: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("image id mismatch: '{left}' vs '{right}'")]
    ImageMismatch { left: String, right: String },

    #[error("missing confidence: {0}")]
    MissingConfidence(String),

    #[error("loss became NaN at epoch {epoch}, step {step}")]
    Diverged { epoch: usize, step: usize },

    #[error("vocabulary hash mismatch: checkpoint has {expected}, got {found}")]
    VocabularyMismatch { expected: String, found: String },

    #[error("missing predictions for {} question(s): {}", .0.len(), .0.join(", "))]
    MissingPredictions(Vec<String>),

    #[error("missing noisy scene graph for {} image(s): {}", .0.len(), .0.join(", "))]
    MissingNoisy(Vec<String>),

    #[error("duplicate regime label '{0}'")]
    DuplicateRegime(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("feature file error: {0}")]
    Feature(String),

    #[error("plot error: {0}")]
    Plot(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Converts a serde_json error into a [`Error::Document`] with a byte offset into `text`.
    pub(crate) fn json(text: &str, err: serde_json::Error) -> Self {
        Error::Document {
            offset: byte_offset(text, err.line(), err.column()),
            message: err.to_string(),
        }
    }
}

/// Maps a 1-based (line, column) pair onto a byte offset.
pub(crate) fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let mut offset = 0;
    for (i, l) in text.split_inclusive('\n').enumerate() {
        if i + 1 == line {
            return (offset + column.saturating_sub(1)).min(text.len());
        }
        offset += l.len();
    }
    text.len()
}
