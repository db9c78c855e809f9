use std::path::PathBuf;

use thiserror::Error;

use crate::scene::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid rectangle: {0}")]
    InvalidRect(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// JSON syntax or schema problem. serde's message carries line/column and
    /// the offending field name.
    #[error("{context}: {message}")]
    Parse { context: String, message: String },

    #[error("scene failed validation: {}", format_violations(.0))]
    Validation(Vec<Violation>),

    #[error("generator could not place the goal after {attempts} attempts ({room_type})")]
    Generator { room_type: String, attempts: usize },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("invalid start position: {0}")]
    InvalidStart(String),

    #[error("episode already finished after {steps} steps")]
    EpisodeFinished { steps: u32 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("weight file: {0}")]
    WeightFormat(String),

    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("replay memory holds {have} transitions, batch needs {need}")]
    InsufficientMemory { have: usize, need: usize },
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config { key: key.into(), message: message.into() }
    }
}
