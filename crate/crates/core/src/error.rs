use thiserror::Error;

/// Errors produced by the simulator, the learners, and the harness.
#[derive(Debug, Error)]
pub enum Error {
    /// Dimension or shape mismatch between a network and its inputs/gradients.
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    /// A value violates a documented precondition (invalid interval, bad probability, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Invalid experiment or network configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// A loss or gradient became non-finite during training.
    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(context: &'static str, expected: usize, actual: usize) -> Self {
        Error::Dimension {
            context,
            expected,
            actual,
        }
    }
}
