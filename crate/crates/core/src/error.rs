use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Every root colour has probability zero given the boundary.
    #[error("leaf configuration has probability zero under every root colour")]
    ZeroProbabilityBoundary,

    #[error("instance too large for enumeration: {terms} terms exceeds cap {cap}")]
    InstanceTooLarge { terms: f64, cap: f64 },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    /// Process exit status used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) => 3,
            Error::Csv(e) if matches!(e.kind(), csv::ErrorKind::Io(_)) => 3,
            _ => 2,
        }
    }
}
