use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A record, score or lexicon line failed validation.
    #[error("line {line}: field `{field}`: {message}")]
    Line {
        line: usize,
        field: &'static str,
        message: String,
    },

    #[error("invalid vocabulary: {0}")]
    Vocabulary(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("decode step {step}: {message}")]
    Distribution { step: usize, message: String },

    #[error("degenerate caption `{sample_id}`: no tokens left to score")]
    DegenerateCaption { sample_id: String },

    #[error("empty score group: {0}")]
    EmptyGroup(&'static str),

    #[error("sample `{0}` has no reference captions")]
    MissingReferences(String),

    #[error("crop box {x},{y} {w}x{h} exceeds image bounds {width}x{height}")]
    CropOutOfBounds {
        x: u32,
        y: u32,
        w: u32,
        h: u32,
        width: u32,
        height: u32,
    },

    #[error("image: {0}")]
    Image(String),

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn line(line: usize, field: &'static str, message: impl Into<String>) -> Self {
        Error::Line {
            line,
            field,
            message: message.into(),
        }
    }

    /// True for errors caused by bad user input rather than a failing computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Line { .. }
                | Error::Vocabulary(_)
                | Error::Config(_)
                | Error::MissingReferences(_)
                | Error::CropOutOfBounds { .. }
                | Error::ModelFormat(_)
                | Error::Json(_)
                | Error::EmptyGroup(_)
        )
    }
}
