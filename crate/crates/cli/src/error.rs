use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] intrinsic_core::Error),
    #[error("{}: {message}", path.display())]
    Io { path: PathBuf, message: String },
    #[error("{0}")]
    Usage(String),
    #[error("plot: {0}")]
    Plot(String),
}

impl CliError {
    pub fn io(path: impl AsRef<Path>, err: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.as_ref().to_path_buf(),
            message: err.to_string(),
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

/// Single-line rendering of an error for the terminal.
pub fn diagnostic(err: &CliError) -> String {
    let text = err.to_string();
    let mut parts = text.lines().map(str::trim).filter(|l| !l.is_empty());
    let first = parts.next().unwrap_or("unknown error").to_string();
    parts.fold(first, |acc, l| acc + "; " + l)
}
