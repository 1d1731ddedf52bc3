use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the solver stack.
#[derive(Debug, Error)]
pub enum TregError {
    #[error("invalid configuration for `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("unknown concept label `{0}`")]
    UnknownConcept(String),

    #[error("timestep {t} outside 1..={max}")]
    TimestepRange { t: usize, max: usize },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("operation not supported: {0}")]
    Unsupported(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("singular coefficient: {0}")]
    Singular(String),

    #[error("run diverged at step {step} (t = {t})")]
    Diverged { step: usize, t: usize },

    #[error("cannot read `{path}`: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl TregError {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        TregError::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by user-supplied configuration (CLI exit code 2).
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            TregError::Config { .. }
                | TregError::Read { .. }
                | TregError::Parse(_)
                | TregError::Json(_)
                | TregError::UnknownConcept(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, TregError>;

pub(crate) fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(TregError::Dimension {
            context,
            expected,
            got,
        });
    }
    Ok(())
}
