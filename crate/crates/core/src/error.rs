use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite input to {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("backward already ran on this graph; call zero_grad or enable retain_graph")]
    GraphConsumed,

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("missing gradient for parameter `{0}`")]
    MissingGrad(String),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("sequence of length {len} exceeds max positions {max}")]
    Overlength { len: usize, max: usize },

    #[error("attention row has every position masked")]
    AllMasked,

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config field `{field}`: {msg}")]
    Config { field: String, msg: String },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    /// Attributes an error to a pipeline stage (configuration errors pass
    /// through unchanged).
    pub fn in_stage(self, stage: &str) -> Self {
        match self {
            e @ (Error::Config { .. } | Error::Stage { .. }) => e,
            e => Error::Stage {
                stage: stage.to_string(),
                source: Box::new(e),
            },
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
