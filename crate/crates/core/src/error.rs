use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("numeric range error: {0}")]
    NumericRange(String),

    #[error(
        "frequency ({fx:.4}, {fy:.4}) cycles/um is beyond the height-field Nyquist limit \
         ({nyquist_x:.4}, {nyquist_y:.4})"
    )]
    OutOfBand {
        fx: f64,
        fy: f64,
        nyquist_x: f64,
        nyquist_y: f64,
    },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("metadata: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    /// True for failures of the numerical pipeline rather than of inputs or files.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NumericRange(_) | Error::OutOfBand { .. } | Error::Diverged { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
