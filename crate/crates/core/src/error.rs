use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, fractions or layer references that cannot describe a valid network.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite value in layer {layer}")]
    Numeric { layer: usize },

    /// The continual-learning protocol was broken (e.g. a label from another task).
    #[error("protocol error: {0}")]
    Protocol(String),

    /// An internal contract was violated, such as updating a frozen connection set.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("capacity exhausted in layer {layer}: {detail}")]
    CapacityExhausted { layer: usize, detail: String },

    #[error("format error at byte offset {offset}: {detail}")]
    Format { offset: usize, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn protocol(msg: impl Into<String>) -> Self {
        Error::Protocol(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}
