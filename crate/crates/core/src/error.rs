use thiserror::Error;

/// Errors raised by the calibration, theory and simulator layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum LensError {
    #[error("group size {got} is below the minimum of 2")]
    SizeError { got: usize },

    #[error("inconsistent sample `{response_id}`: {reason}")]
    InconsistentSample { response_id: String, reason: String },

    #[error("invalid reward {value} for `{response_id}`: rewards must be 0 or 1")]
    InvalidReward { response_id: String, value: f64 },

    #[error("invalid question `{id}`: {reason}")]
    InvalidQuestion { id: String, reason: String },

    #[error("domain error: {0}")]
    DomainError(String),

    #[error("question `{0}` has an empty correct set")]
    EmptyCorrectSet(String),

    #[error("k = {k} exceeds the number of samples n = {n}")]
    KTooLarge { k: usize, n: usize },

    #[error("invalid task spec: {0}")]
    SpecError(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid answer for question {question}: {reason}")]
    InvalidAnswer { question: usize, reason: String },

    #[error("non-finite gradient at step {step}")]
    NonFiniteGradient { step: usize },
}

impl LensError {
    /// Variant name, for messages that must identify the failure class.
    pub fn name(&self) -> &'static str {
        match self {
            LensError::SizeError { .. } => "SizeError",
            LensError::InconsistentSample { .. } => "InconsistentSample",
            LensError::InvalidReward { .. } => "InvalidReward",
            LensError::InvalidQuestion { .. } => "InvalidQuestion",
            LensError::DomainError(_) => "DomainError",
            LensError::EmptyCorrectSet(_) => "EmptyCorrectSet",
            LensError::KTooLarge { .. } => "KTooLarge",
            LensError::SpecError(_) => "SpecError",
            LensError::InvalidConfig(_) => "InvalidConfig",
            LensError::InvalidAnswer { .. } => "InvalidAnswer",
            LensError::NonFiniteGradient { .. } => "NonFiniteGradient",
        }
    }
}

pub type Result<T, E = LensError> = std::result::Result<T, E>;
