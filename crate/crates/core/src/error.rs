use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid dimensions, schedules or settings.
    #[error("configuration error: {0}")]
    Config(String),

    /// A non-finite value or a failed factorization.
    #[error("numeric error{}: {message}", layer.map(|l| format!(" at layer {l}")).unwrap_or_default())]
    Numeric {
        layer: Option<usize>,
        message: String,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn numeric(layer: Option<usize>, msg: impl Into<String>) -> Self {
        Error::Numeric {
            layer,
            message: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
