use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("data error: {0}")]
    Data(#[from] pulsebench_core::Error),

    #[error("model error: {0}")]
    Model(#[from] pulsebench_model::ModelError),

    #[error("numerical divergence at step {step}: {what}")]
    Divergence { step: usize, what: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("toml error: {0}")]
    Toml(#[from] toml::de::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        HarnessError::Config(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        HarnessError::Input(msg.into())
    }

    /// Process exit code: 2 config, 3 data or format, 4 divergence.
    pub fn exit_code(&self) -> i32 {
        use pulsebench_model::ModelError;
        match self {
            HarnessError::Config(_) | HarnessError::Toml(_) => 2,
            HarnessError::Model(ModelError::Config(_)) => 2,
            HarnessError::Divergence { .. } => 4,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
