use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("checkpoint format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NnError>;

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(NnError::Dimension(msg.into()))
}
