use std::path::PathBuf;

use forge_core::ForgeError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("usage: {0}")]
    Usage(String),
    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),
    #[error("hash mismatch for {}: manifest says {expected}, file has {actual}", .path.display())]
    HashMismatch { path: PathBuf, expected: String, actual: String },
    #[error("io error on {}: {source}", .path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("bad config: {0}")]
    Config(String),
    #[error("mixed tasks: {0}")]
    MixedTasks(String),
    #[error(transparent)]
    Core(#[from] ForgeError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("verification failed: {0} check(s) violated")]
    VerifyFailed(usize),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit status: 2 for a failed verification, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::VerifyFailed(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
