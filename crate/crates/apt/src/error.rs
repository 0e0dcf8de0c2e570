//! Crate-wide error type. Library code returns `Result<T>`; the CLI maps
//! errors to nonzero exit codes.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An op was applied to operands whose shapes do not satisfy its contract.
    #[error("{op}: shape mismatch, lhs {lhs:?} vs rhs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A softmax row had every position masked out.
    #[error("masked softmax: row {row} has no visible positions")]
    DegenerateSoftmaxRow { row: usize },

    /// A caller broke an API precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Rejected configuration (bad value, inconsistent keys, unparsable file).
    #[error("config error: {0}")]
    Config(String),

    /// A required upstream artifact (checkpoint, manifest, rendered data) is missing.
    #[error("dependency error: {0}")]
    Dependency(String),

    /// An annotation cannot support the requested task rendering.
    #[error("unsupported annotation: {0}")]
    UnsupportedAnnotation(String),

    /// The function under gradient check returned different values for the same input.
    #[error("gradient check: non-deterministic evaluation ({0})")]
    NonDeterministic(String),

    /// Training produced a non-finite loss and aborted.
    #[error("non-finite loss at stage {stage} step {step} (task {task})")]
    NonFiniteLoss {
        stage: String,
        step: u64,
        task: String,
    },

    /// Malformed or corrupt checkpoint file.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Malformed manifest line.
    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
