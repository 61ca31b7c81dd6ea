use std::io;

use lens_core::LensError;
use thiserror::Error;

/// Every failure the command line can report, each with a fixed exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("i/o error: {0}")]
    Io(String),

    #[error("verification failed")]
    VerifyFailed,

    #[error("{source_name}:{line}: {kind}: {message}")]
    Malformed {
        source_name: String,
        line: usize,
        kind: String,
        message: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("incomplete group `{group_id}`: {reason}")]
    IncompleteGroup { group_id: String, reason: String },

    #[error("non-finite gradient at step {step}")]
    NonFiniteGradient { step: usize },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) | CliError::VerifyFailed => 1,
            CliError::Malformed { .. } | CliError::Config(_) => 2,
            CliError::IncompleteGroup { .. } => 3,
            CliError::NonFiniteGradient { .. } => 4,
        }
    }

    pub fn malformed(source_name: &str, line: usize, kind: &str, message: impl Into<String>) -> Self {
        CliError::Malformed {
            source_name: source_name.to_string(),
            line,
            kind: kind.to_string(),
            message: message.into(),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<LensError> for CliError {
    fn from(e: LensError) -> Self {
        match e {
            LensError::NonFiniteGradient { step } => CliError::NonFiniteGradient { step },
            LensError::InvalidConfig(m) | LensError::SpecError(m) => CliError::Config(m),
            other => CliError::Config(format!("{}: {other}", other.name())),
        }
    }
}
