use std::path::PathBuf;

/// Errors produced anywhere in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Operand shapes do not line up.
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    /// Two trees (parameters, gradients, moments) do not share names or shapes,
    /// or a required parameter is missing.
    #[error("structural mismatch: {0}")]
    Structure(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    /// Malformed on-disk container or checkpoint.
    #[error("format error in {} at byte {position}: {detail}", path.display())]
    Format {
        path: PathBuf,
        position: u64,
        detail: String,
    },

    #[error("configuration error for key `{key}`: {detail}")]
    Config { key: String, detail: String },

    #[error("training aborted at step {step}: {detail}")]
    Diverged { step: u64, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
