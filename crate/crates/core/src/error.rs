use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite value at step {step}: {what}")]
    Numeric { step: usize, what: String },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("shape mismatch: expected {expected}, got {got} ({context})")]
    Shape {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("no accepted trajectories in update {update}: every sampled trajectory violated a diversity constraint and no intrinsic reward is enabled")]
    NoAcceptedTrajectories { update: usize },

    #[error("rollout of trajectory {index} failed: {source}")]
    Rollout {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("enumeration refused: {0}")]
    SizeGuard(String),

    #[error("assumption violated ({assumption}): {detail}")]
    Assumption {
        assumption: &'static str,
        detail: String,
    },

    #[error("corrupt checkpoint {path}: {detail}")]
    Checkpoint { path: PathBuf, detail: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

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

    /// Process exit code for the command-line runner.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Json(_) => 2,
            _ => 1,
        }
    }
}
