use std::path::PathBuf;

pub type Result<T, E = DetoxError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum DetoxError {
    #[error(transparent)]
    Core(#[from] detox_core::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}:{line}: {message}", path.display())]
    Input {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl DetoxError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DetoxError::Io {
            path: path.into(),
            source,
        }
    }
}
