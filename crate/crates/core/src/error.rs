use std::path::PathBuf;

use moed_tensor::TensorError;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    /// Malformed or degenerate input data.
    #[error("data error: {0}")]
    Data(String),

    #[error("config error: {0}")]
    Config(String),

    /// A WAV file that is not mono 16-bit PCM at 16 kHz.
    #[error("unsupported WAV {field}: {detail}")]
    Format { field: &'static str, detail: String },

    /// Features of one kind handed to an expert expecting another.
    #[error("routing error: expert expects {expected} features, got {got}")]
    Routing { expected: String, got: String },

    #[error("metric error: {0}")]
    Metric(String),

    #[error("non-finite loss {value} at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: u64, value: f64 },

    /// Checkpoint contents disagree with the active configuration.
    #[error("checkpoint mismatch: {0}")]
    Mismatch(String),

    #[error("missing input: {}", .0.display())]
    Missing(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Process exit status used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Missing(_) => 2,
            Error::NonFiniteLoss { .. } | Error::Tensor(TensorError::NonFiniteGradient { .. }) => 3,
            Error::Mismatch(_) | Error::Config(_) | Error::Tensor(TensorError::Checkpoint(_)) => 4,
            _ => 1,
        }
    }
}
