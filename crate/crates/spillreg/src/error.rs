use std::io;
use std::path::PathBuf;

use spillreg_core::Error as CoreError;

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(CoreError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: malformed JSON: {source}", path.display())]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{}: malformed CSV: {source}", path.display())]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{}: unsupported {kind} format version {found} (this build reads version {expected})", path.display())]
    Version { path: PathBuf, kind: &'static str, found: u64, expected: u64 },
    #[error("{message}")]
    Diverged { message: String, checkpoint: Option<PathBuf> },
}

impl AppError {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> AppError {
        let path = path.into();
        move |source| AppError::Io { path, source }
    }

    pub fn json(path: impl Into<PathBuf>) -> impl FnOnce(serde_json::Error) -> AppError {
        let path = path.into();
        move |source| AppError::Json { path, source }
    }

    pub fn csv(path: impl Into<PathBuf>) -> impl FnOnce(csv::Error) -> AppError {
        let path = path.into();
        move |source| AppError::Csv { path, source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) | AppError::Json { .. } | AppError::Version { .. } => EXIT_CONFIG,
            AppError::Core(e) if e.is_divergence() => EXIT_DIVERGED,
            AppError::Core(_) => EXIT_CONFIG,
            AppError::Io { .. } => EXIT_IO,
            AppError::Csv { source, .. } if source.is_io_error() => EXIT_IO,
            AppError::Csv { .. } => EXIT_CONFIG,
            AppError::Diverged { .. } => EXIT_DIVERGED,
        }
    }
}

impl From<CoreError> for AppError {
    fn from(e: CoreError) -> Self {
        AppError::Core(e)
    }
}

pub type AppResult<T> = Result<T, AppError>;
