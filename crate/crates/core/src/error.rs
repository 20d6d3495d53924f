use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid axis {axis} for rank {rank}")]
    InvalidAxis { axis: usize, rank: usize },

    #[error("{op} does not support dtype {dtype}")]
    UnsupportedDType {
        op: &'static str,
        dtype: crate::tensor::DType,
    },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("channel spec mismatch in {layer}: expected {expected}, got {actual}")]
    SpecMismatch {
        layer: String,
        expected: String,
        actual: String,
    },

    #[error("missing required constant `{0}`")]
    MissingConstant(String),

    #[error("layer `{0}` does not support step-wise execution")]
    NotSteppable(String),

    #[error("block of {len} timesteps is not a multiple of block size {block_size} for layer `{layer}`")]
    BlockSize {
        layer: String,
        len: usize,
        block_size: usize,
    },

    #[error("state mismatch in layer `{0}`")]
    StateMismatch(String),

    #[error("{path}: {message}")]
    Config { path: String, message: String },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}
