use thiserror::Error;

pub type Result<T> = std::result::Result<T, LpomError>;

#[derive(Debug, Error)]
pub enum LpomError {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    DimensionMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("empty input to {0}")]
    Empty(&'static str),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("rank-deficient system in {0}; supply a ridge > 0")]
    RankDeficient(&'static str),

    #[error("{value} lies outside the domain of {what}")]
    Domain { what: String, value: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed {format} data: {reason}")]
    Format { format: &'static str, reason: String },

    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl LpomError {
    pub(crate) fn format(format: &'static str, reason: impl Into<String>) -> Self {
        LpomError::Format {
            format,
            reason: reason.into(),
        }
    }
}
