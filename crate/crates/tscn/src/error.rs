use std::path::Path;

/// Failure of a command, classified by exit code.
#[derive(Debug, thiserror::Error)]
pub enum AppError {
    /// Bad flags, unreadable or invalid configuration.
    #[error("{0}")]
    Usage(String),
    /// Missing or malformed dataset, checkpoint or proposal files.
    #[error("{0}")]
    Data(String),
    /// Non-finite values during training or inference.
    #[error("{0}")]
    Numeric(String),
}

impl AppError {
    pub fn exit_code(&self) -> u8 {
        match self {
            AppError::Usage(_) => 1,
            AppError::Data(_) => 2,
            AppError::Numeric(_) => 3,
        }
    }

    pub(crate) fn io(path: &Path, err: std::io::Error) -> Self {
        AppError::Data(format!("{}: {err}", path.display()))
    }
}

impl From<tscn_core::Error> for AppError {
    fn from(err: tscn_core::Error) -> Self {
        match err {
            tscn_core::Error::NonFinite { .. } => AppError::Numeric(err.to_string()),
            tscn_core::Error::InvalidConfig(_) => AppError::Usage(err.to_string()),
            _ => AppError::Data(err.to_string()),
        }
    }
}

pub type Result<T, E = AppError> = std::result::Result<T, E>;
