use std::path::PathBuf;

use thiserror::Error;

/// Coarse failure class, mapped onto the CLI exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Io,
}

impl ErrorCategory {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Config => 2,
            ErrorCategory::Data => 3,
            ErrorCategory::Io => 4,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("history window of {got} steps is too short, need at least {need}")]
    HorizonTooShort { got: usize, need: usize },

    #[error("agent {agent_id} is not observed at step {step}")]
    Unobserved { agent_id: String, step: usize },

    #[error("state is not observed")]
    UnobservedState,

    #[error("agent {agent_id} is not fully observed and cannot be augmented")]
    NotAugmentable { agent_id: String },

    #[error("agent {agent_id} not found in scene {scene_id}")]
    MissingAgent { scene_id: String, agent_id: String },

    #[error("no score computed for pool member {agent_id}")]
    MissingScore { agent_id: String },

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("inconsistent selection plan for scene {scene_id}: {reason}")]
    InvalidPlan { scene_id: String, reason: String },

    #[error("histogram needs at least 2 bins, got {0}")]
    TooFewBins(usize),

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("{path}:{line}: scene {scene_id} failed validation: {summary}")]
    InvalidScene {
        path: PathBuf,
        line: usize,
        scene_id: String,
        summary: String,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("[{stage}] {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_) => ErrorCategory::Config,
            Error::Io { .. } => ErrorCategory::Io,
            Error::Stage { source, .. } => source.category(),
            _ => ErrorCategory::Data,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
