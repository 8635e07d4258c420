use thiserror::Error;

#[derive(Debug, Error)]
pub enum DkError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DkError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(DkError::InvalidParameter(msg.into()))
}

pub(crate) fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(DkError::InvalidParameter(msg()))
    }
}
