use std::path::PathBuf;

use thiserror::Error;

use crate::config::Violation;

pub type Result<T, E = GameError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum GameError {
    #[error("invalid game configuration: {}", format_violations(.0))]
    InvalidConfig(Vec<Violation>),

    #[error("malformed state: {0}")]
    MalformedState(String),

    #[error("state space too large: {0}")]
    StateSpaceTooLarge(String),

    #[error("reduced state space requires homogeneous players: {0}")]
    NotHomogeneous(String),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("scenario mismatch: {0}")]
    ScenarioMismatch(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("direct solve refused for {size} states (limit {limit}); use the iterative solver")]
    DirectSolveTooLarge { size: usize, limit: usize },

    #[error("banded solve refused: bandwidth {bandwidth} exceeds {limit}")]
    BandTooWide { bandwidth: usize, limit: usize },

    #[error("episode exceeded {0} events without absorbing")]
    EpisodeLimit(u64),

    #[error("invalid experiment: {0}")]
    InvalidExperiment(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl GameError {
    /// True for failures to read or write files.
    pub fn is_file_error(&self) -> bool {
        matches!(self, GameError::Io { .. })
    }
}

fn format_violations(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
