//! Error type shared across the crate.

use std::path::Path;

pub type Result<T, E = GaError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum GaError {
    /// Operand shapes are incompatible for a tensor primitive.
    #[error("shape mismatch in `{op}`: lhs {lhs:?} vs rhs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A documented precondition was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Malformed input data (dataset, embedding file, checkpoint, ...).
    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    /// Bad configuration key, value, or combination.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// A gradient became NaN during optimization.
    #[error("NaN gradient in parameter `{0}`")]
    NanGradient(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl GaError {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        GaError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        GaError::Contract(msg.into())
    }

    /// Process exit code contract: 1 for usage/config/input errors, 2 for
    /// runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            GaError::Config(_) | GaError::Parse { .. } | GaError::Io { .. } => 1,
            _ => 2,
        }
    }
}
