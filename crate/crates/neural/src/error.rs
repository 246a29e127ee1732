use thiserror::Error;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// A training loss turned non-finite; carries the last set of finite
    /// parameters so callers can recover.
    #[error("training failure: {reason}")]
    TrainingFailure {
        reason: String,
        checkpoint: Box<crate::mlp::Mlp>,
    },

    /// Discriminator accuracy pinned at a degenerate level for a sustained
    /// window during adversarial training.
    #[error("mode collapse: {0}")]
    ModeCollapse(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NeuralError>;
