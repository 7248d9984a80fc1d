use sketchdial_core::error::CoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("instruction is {len} characters; the limit is {max}")]
    TooLong { len: usize, max: usize },
    #[error("{0} not found")]
    NotFound(String),
    #[error("session {0} is busy with another request")]
    Busy(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    BadRequest(String),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl ServiceError {
    pub fn status(&self) -> u16 {
        match self {
            ServiceError::TooLong { .. } => 413,
            ServiceError::NotFound(_) => 404,
            ServiceError::Busy(_) | ServiceError::Conflict(_) => 409,
            ServiceError::BadRequest(_) | ServiceError::Json(_) => 400,
            ServiceError::Core(CoreError::Input(_)) => 400,
            ServiceError::Core(_) | ServiceError::Io(_) => 500,
        }
    }
}

pub type Result<T> = std::result::Result<T, ServiceError>;
