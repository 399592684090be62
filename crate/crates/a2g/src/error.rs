//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the simulation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("manifold spec mismatch: {0}")]
    SpecMismatch(&'static str),

    #[error("{0} must be nonempty")]
    EmptyInput(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid config at `{path}`: {reason}")]
    Config { path: String, reason: String },

    #[error("infeasible partition: {0}")]
    Infeasible(String),

    #[error("non-finite loss at step {step}{}", fmt_detail(detail))]
    Divergence { step: usize, detail: String },

    #[error("client {client} reported no gradient but eta > 0 requires one")]
    MissingGradient { client: usize },

    #[error("csv error at line {line}: {reason}")]
    Csv { line: usize, reason: String },

    #[error("{0}")]
    Runtime(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn fmt_detail(detail: &str) -> String {
    if detail.is_empty() {
        String::new()
    } else {
        format!(" ({detail})")
    }
}

impl Error {
    /// Attach client/round context to a training failure.
    pub fn with_client_context(self, client: usize, round: usize) -> Self {
        match self {
            Error::Divergence { step, detail } => {
                let prefix = format!("client {client}, round {round}");
                let detail = if detail.is_empty() {
                    prefix
                } else {
                    format!("{prefix}: {detail}")
                };
                Error::Divergence { step, detail }
            }
            other => other,
        }
    }

    /// Process exit code for the CLI contract: 1 config error, 2 runtime error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
