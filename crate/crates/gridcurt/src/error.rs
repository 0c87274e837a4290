use thiserror::Error;

use crate::grid::ValidationIssue;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),

    #[error("invalid grid: {}", format_issues(.0))]
    Validation(Vec<ValidationIssue>),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("supply task rejected: {0}")]
    TaskRejected(String),

    #[error("environment misuse: {0}")]
    Env(String),

    #[error("replay buffer holds {available} experiences, need {requested}")]
    BufferUnderfilled { available: usize, requested: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("brute force limited to k <= 2 controllable buses, got {0}")]
    BruteForceTooLarge(usize),

    #[error("checkpoint grid hash {checkpoint} does not match grid {grid}")]
    GridHashMismatch { checkpoint: String, grid: String },

    #[error("dataset error: {0}")]
    Dataset(String),
}

fn format_issues(issues: &[ValidationIssue]) -> String {
    issues
        .iter()
        .map(|i| i.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

pub type Result<T> = std::result::Result<T, Error>;
