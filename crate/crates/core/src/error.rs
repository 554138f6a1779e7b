use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error("class {class:?} has {available} training images, {requested} requested")]
    UnderPopulatedClass {
        class: String,
        available: usize,
        requested: usize,
    },

    #[error("unknown image id {0:?}")]
    UnknownImage(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("zero vector cannot be normalized")]
    ZeroVector,

    #[error("invalid template {id:?}: {message}")]
    Template { id: String, message: String },

    #[error("caption provider failed: {0}")]
    Provider(String),

    #[error("class {0:?} has no usable captions")]
    NoCaptions(String),

    #[error("caption {0:?} has no summary")]
    MissingSummary(String),

    #[error("encoder error: {0}")]
    Encoder(String),

    #[error("embedding cache error: {0}")]
    Cache(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("training diverged at step {step}")]
    Diverged { step: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
