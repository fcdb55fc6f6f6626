use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("non-finite loss when perturbing `{param}`[{index}]")]
    NonFiniteLoss { param: String, index: usize },

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("sequence of length {len} does not fit padded length {target}")]
    TooLong { len: usize, target: usize },

    #[error("not a permutation: {0}")]
    NotPermutation(String),

    #[error("malformed switch settings: {0}")]
    Settings(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("training diverged at step {step} (loss {loss})")]
    Diverged { step: u64, loss: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
