use thiserror::Error;

/// Errors raised by the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("input is empty")]
    EmptyInput,

    #[error("position {position} out of range for input of {len} units")]
    IndexError { position: usize, len: usize },

    #[error("capability not supported: {0}")]
    CapabilityError(String),

    #[error("backend failure: {0}")]
    BackendError(String),

    #[error("protocol violation: {0}")]
    ProtocolViolation(String),

    #[error("invalid configuration: {0}")]
    ConfigError(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("shape mismatch: {0}")]
    ShapeError(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("precondition failed: {0}")]
    PreconditionFailed(String),

    #[error("invariant violated: {0}")]
    InvariantViolation(String),

    #[error("at position {position}: {source}")]
    AtPosition {
        position: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn at(position: usize, source: Error) -> Self {
        Error::AtPosition {
            position,
            source: Box::new(source),
        }
    }

    /// Strips position context, returning the underlying error.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtPosition { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
