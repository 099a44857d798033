use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("non-finite gradient in `{param}` at index {index}: {value}")]
    NonFiniteGradient {
        param: String,
        index: usize,
        value: f64,
    },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = AutodiffError> = std::result::Result<T, E>;
