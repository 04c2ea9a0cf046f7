use std::io;
use std::path::Path;

/// Errors surfaced by the command-line tools. Validation problems (bad
/// input, missing files, shape mismatches) exit with 2, everything else
/// with 3.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),

    #[error("{0}")]
    Runtime(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        CliError::Runtime(msg.into())
    }

    /// Reading an input: a missing or unreadable file is a validation error.
    pub fn read(path: &Path, err: io::Error) -> Self {
        CliError::Validation(format!("cannot read {}: {err}", path.display()))
    }

    pub fn write(path: &Path, err: io::Error) -> Self {
        CliError::Runtime(format!("cannot write {}: {err}", path.display()))
    }
}

impl From<cbct_core::Error> for CliError {
    fn from(err: cbct_core::Error) -> Self {
        use cbct_core::Error as E;
        match err {
            E::Invalid { .. } | E::Geometry(_) | E::Shape { .. } | E::UnknownParam(_) => CliError::Validation(err.to_string()),
            _ => CliError::Runtime(err.to_string()),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(err: serde_json::Error) -> Self {
        CliError::Validation(format!("bad JSON: {err}"))
    }
}
