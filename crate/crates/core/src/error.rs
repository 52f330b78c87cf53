use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite gradient for parameter `{param}`")]
    NonFiniteGradient { param: String },

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: u64 },

    #[error("model error: {0}")]
    Model(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("incompatible artifacts: {0}")]
    Compatibility(String),

    #[error("malformed container: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short stable identifier, used in machine-readable error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::Config(_) => "config",
            Error::NonFiniteGradient { .. } | Error::NonFiniteLoss { .. } => "training",
            Error::Model(_) => "model",
            Error::Generation(_) => "generation",
            Error::Evaluation(_) => "evaluation",
            Error::Compatibility(_) => "compatibility",
            Error::Format(_) => "format",
            Error::Io(_) => "io",
        }
    }
}

pub(crate) fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
