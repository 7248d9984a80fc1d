use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("dimension error: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid object: {0}")]
    InvalidObject(String),
    #[error("context error: {0}")]
    Context(String),
    #[error("empty sketch")]
    EmptySketch,
    #[error("degenerate corpus: {0}")]
    DegenerateCorpus(String),
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("mapping error: {0}")]
    Mapping(String),
    #[error("format error at {location}: {message}")]
    Format { location: String, message: String },
    #[error("category mismatch: expected {expected}, found {found}")]
    CategoryMismatch { expected: String, found: String },
    #[error(transparent)]
    Nn(#[from] sketchdial_nn::NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;

impl CoreError {
    pub fn format(location: impl Into<String>, message: impl Into<String>) -> Self {
        CoreError::Format {
            location: location.into(),
            message: message.into(),
        }
    }
}
