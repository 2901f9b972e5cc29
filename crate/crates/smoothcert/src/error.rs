use std::path::PathBuf;

/// Errors surfaced by the harness and the command-line tool.
#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("count mismatch: {images} images but {labels} labels")]
    Mismatch { images: usize, labels: usize },

    #[error("radius grids do not overlap: {0}")]
    GridMismatch(String),

    #[error("expected a 2-dimensional input, got d={0}")]
    Dim(usize),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error(transparent)]
    Core(#[from] smoothcert_core::Error),
}

pub type Result<T> = std::result::Result<T, AppError>;

impl AppError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AppError::Io { path: path.into(), source }
    }

    /// Process exit code: 2 for configuration problems, 3 for bad or missing data.
    pub fn exit_code(&self) -> i32 {
        use smoothcert_core::Error as E;
        match self {
            AppError::Config(_) | AppError::GridMismatch(_) => 2,
            AppError::Data(_) | AppError::Format(_) | AppError::Mismatch { .. } | AppError::Dim(_) | AppError::Io { .. } => 3,
            AppError::Core(E::Config(_)) => 2,
            AppError::Core(E::Format(_) | E::DimMismatch { .. }) => 3,
            AppError::Core(_) => 1,
        }
    }
}
