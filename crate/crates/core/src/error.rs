use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown skeleton format `{0}`")]
    UnknownFormat(String),

    #[error("duplicate format id `{0}`")]
    DuplicateFormat(String),

    #[error("invalid skeleton format `{id}`: {reason}")]
    InvalidFormat { id: String, reason: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite loss at epoch {epoch}, step {step}: {detail}")]
    NonFiniteLoss { epoch: usize, step: usize, detail: String },

    #[error(transparent)]
    Graph(#[from] numgraph::GraphError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::Invalid(msg.into())
}

/// Lets model code run inside closures that return graph results, such as
/// the gradient oracle.
impl From<Error> for numgraph::GraphError {
    fn from(e: Error) -> Self {
        match e {
            Error::Graph(g) => g,
            other => numgraph::GraphError::Invalid {
                op: "model",
                detail: other.to_string(),
            },
        }
    }
}
