use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("point lies outside the support box")]
    OutOfDomain,

    #[error("no starting point with finite density after {attempts} attempts")]
    InitializationFailure { attempts: usize },

    #[error("target density returned NaN")]
    CorruptTarget,

    #[error("integration failed: {0}")]
    IntegrationFailure(String),

    #[error("no subspace produced usable samples")]
    EmptyResult,

    #[error("missing timing information: {0}")]
    MissingTiming(String),

    #[error("unknown target `{0}`")]
    UnknownTarget(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("every subspace failed")]
    PipelineFailed(Box<crate::pipeline::Manifest>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
