use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] capscore_core::Error),

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("set `{0}` is empty")]
    EmptySet(String),

    #[error("set `{set}` yields {kind} scores but the in-distribution set yields {expected}")]
    MixedScoreKinds {
        set: String,
        kind: &'static str,
        expected: &'static str,
    },

    #[error("set `{set}`: duplicate sample id `{sample_id}`")]
    DuplicateSample { set: String, sample_id: String },

    #[error("{0}")]
    Usage(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Walk {
        path: PathBuf,
        #[source]
        source: walkdir::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 2 for bad input, 3 for failures while running.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_validation() => 2,
            CliError::Manifest(_)
            | CliError::EmptySet(_)
            | CliError::MixedScoreKinds { .. }
            | CliError::DuplicateSample { .. }
            | CliError::Usage(_) => 2,
            _ => 3,
        }
    }
}
