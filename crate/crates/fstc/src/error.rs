//! Process-level error type with stable exit codes.
//!
//! Every failure surfaced by the binary falls into one of three buckets:
//! configuration problems (exit 2), data problems — missing or malformed
//! corpus directories, failed computations (exit 3) — and checkpoint
//! problems — bad magic, version, or fingerprint mismatch (exit 4).

use fstc_core::CoreError;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Invalid or inconsistent configuration (bad key, bad value, missing
    /// required setting). The message names the offending key.
    #[error("config: {0}")]
    Config(String),

    /// Corpus ingestion or experiment execution failed.
    #[error("data: {0}")]
    Data(String),

    /// Checkpoint file is unreadable, unsupported, or incompatible with
    /// the current configuration.
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl CliError {
    /// The process exit code for this error (0 is success).
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Checkpoint(_) => 4,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Config(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

/// IO context helper: annotates an `io::Result` with the path it touched.
pub trait IoContext<T> {
    fn data_context(self, what: &str, path: &std::path::Path) -> Result<T>;
    fn checkpoint_context(self, what: &str, path: &std::path::Path) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn data_context(self, what: &str, path: &std::path::Path) -> Result<T> {
        self.map_err(|e| CliError::Data(format!("{what} {}: {e}", path.display())))
    }

    fn checkpoint_context(self, what: &str, path: &std::path::Path) -> Result<T> {
        self.map_err(|e| CliError::Checkpoint(format!("{what} {}: {e}", path.display())))
    }
}
