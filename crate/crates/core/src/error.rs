use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("unknown item id {0}")]
    UnknownItem(u32),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("non-finite value at step {step}: {detail}")]
    Numeric { step: usize, detail: String },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
