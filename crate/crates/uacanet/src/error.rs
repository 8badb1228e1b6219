use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Two operands (or an operand and a contract) disagree on shape.
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    /// An argument violates an operation's precondition.
    #[error("{0}")]
    InvalidArg(String),

    /// `backward` was called on a non-scalar tensor.
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    /// A parameter that the optimizer expects a gradient for has none.
    #[error("parameter '{0}' has no gradient; run backward before stepping")]
    MissingGrad(String),

    /// Training produced a non-finite loss.
    #[error("non-finite loss at iter {iter} (lr {lr:.3e}): per-map losses {per_map:?}")]
    NanLoss {
        iter: u64,
        lr: f64,
        per_map: Vec<f64>,
    },

    /// Malformed Netpbm file.
    #[error("{path}: byte {offset}: {msg}")]
    Netpbm {
        path: String,
        offset: usize,
        msg: String,
    },

    /// Checkpoint file rejected.
    #[error("checkpoint: {0}")]
    Checkpoint(String),

    /// Bad run configuration.
    #[error("config: {0}")]
    Config(String),

    /// Dataset layout or content problem.
    #[error("dataset: {0}")]
    Dataset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }
}
