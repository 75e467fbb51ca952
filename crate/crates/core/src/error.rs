use thiserror::Error;

/// Errors raised by the samplers, models and harness.
#[derive(Debug, Error)]
pub enum LfsError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("parameter {theta:?} lies outside the prior support of model `{model}`")]
    Domain { model: String, theta: Vec<f64> },

    #[error("model `{model}` has no analytic oracle for the {kernel} kernel")]
    Capability { model: String, kernel: String },

    #[error("{what}: proposal budget exhausted after {proposals_used} proposals")]
    BudgetExhausted { what: String, proposals_used: u64 },

    #[error("all particle weights collapsed to zero at SMC step {step}")]
    WeightCollapse { step: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = LfsError> = std::result::Result<T, E>;

impl LfsError {
    pub fn config(msg: impl Into<String>) -> Self {
        LfsError::Config(msg.into())
    }
}
