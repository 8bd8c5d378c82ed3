use std::path::{Path, PathBuf};

/// Failures of file handling and commands, each with a fixed exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },
    #[error("missing input {}: {reason}", path.display())]
    Missing { path: PathBuf, reason: String },
    #[error("malformed file {}: {reason}", path.display())]
    Format { path: PathBuf, reason: String },
    #[error("truncated file {}: {reason}", path.display())]
    Truncated { path: PathBuf, reason: String },
    #[error("numeric abort: {0}")]
    Numeric(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("cannot write {}: {source}", path.display())]
    Write { path: PathBuf, source: std::io::Error },
    #[error("verification failed: {0}")]
    Verification(String),
    #[error(transparent)]
    Core(videollm_core::Error),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

impl CliError {
    /// 0 ok, 2 config, 3 missing or unreadable input, 4 numeric abort,
    /// 5 shape mismatch, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Missing { .. } | CliError::Format { .. } | CliError::Truncated { .. } => 3,
            CliError::Numeric(_) => 4,
            CliError::Shape(_) => 5,
            CliError::Write { .. } | CliError::Verification(_) | CliError::Core(_) => 1,
        }
    }

    pub fn format(path: &Path, reason: impl Into<String>) -> Self {
        CliError::Format {
            path: path.to_path_buf(),
            reason: reason.into(),
        }
    }

    pub fn write(path: &Path, source: std::io::Error) -> Self {
        CliError::Write {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Opening or reading `path` failed.
    pub fn read(path: &Path, source: std::io::Error) -> Self {
        CliError::Missing {
            path: path.to_path_buf(),
            reason: source.to_string(),
        }
    }

    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        CliError::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

impl From<videollm_core::Error> for CliError {
    fn from(e: videollm_core::Error) -> Self {
        use videollm_core::Error as E;
        match e {
            E::Config { field, reason } => CliError::Config { field, reason },
            E::NonFinite(what) => CliError::Numeric(what),
            E::Shape { op, detail } => CliError::Shape(format!("{op}: {detail}")),
            other => CliError::Core(other),
        }
    }
}
