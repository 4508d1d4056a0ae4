use std::path::PathBuf;

/// Errors of the IO layer, the harness and the command-line front end.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] ldpwave_core::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed records file: {0}")]
    Records(String),
    #[error("digest mismatch: {0}")]
    Digest(String),
    #[error("privacy audit failed: max log-ratio {max} exceeds alpha = {alpha}")]
    AuditFailed { max: f64, alpha: f64 },
    #[error("{} already exists with different content", .0.display())]
    OutputConflict(PathBuf),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code: 2 configuration, 3 digest mismatch, 4 failed
    /// privacy audit, 5 IO.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Core(ldpwave_core::Error::NuMismatch { .. }) | Error::Digest(_) => 3,
            Error::Core(_) | Error::Config(_) | Error::Records(_) => 2,
            Error::AuditFailed { .. } => 4,
            Error::Io { .. } | Error::OutputConflict(_) => 5,
        }
    }
}
