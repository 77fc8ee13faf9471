use std::path::{Path, PathBuf};

use thiserror::Error;

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] flipkit::Error),

    #[error("{0}")]
    Usage(String),

    #[error("input file {} does not exist", .0.display())]
    Missing(PathBuf),

    #[error("{}: {message}", path.display())]
    Io { path: PathBuf, message: String },

    #[error("{}: output failed schema validation on read-back", .0.display())]
    Schema(PathBuf),
}

impl CliError {
    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }

    /// 2 for filesystem trouble, 1 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_io() => 2,
            CliError::Missing(_) | CliError::Io { .. } => 2,
            _ => 1,
        }
    }
}
