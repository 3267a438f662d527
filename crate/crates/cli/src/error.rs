//! Error taxonomy of the toolkit and its mapping onto stable process exit
//! codes.

use std::path::PathBuf;

use lrsift_core::Error as CoreError;

/// Documented, stable exit codes of the `lrsift` binary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(i32)]
pub enum ExitStatus {
    Ok = 0,
    /// File missing, unreadable, unwritable, or in a broken/unknown format.
    Io = 2,
    /// Bad configuration, manifest or argument values.
    Validation = 3,
    /// The solver or descriptor stage degenerated (no usable output).
    Solver = 4,
    /// `bench` was asked for an experiment it does not know.
    UnknownExperiment = 5,
    /// A query produced zero features; an empty result array was printed.
    EmptyQuery = 6,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        self as i32
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),
    #[error("i/o error on {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt data in {path}: {message}")]
    CorruptData { path: PathBuf, message: String },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("unknown experiment: {0}")]
    UnknownExperiment(String),
}

impl CliError {
    pub fn exit_status(&self) -> ExitStatus {
        match self {
            CliError::MissingFile(_)
            | CliError::Io { .. }
            | CliError::UnsupportedFormat(_)
            | CliError::CorruptData { .. } => ExitStatus::Io,
            CliError::Validation(_) => ExitStatus::Validation,
            CliError::Solver(_) => ExitStatus::Solver,
            CliError::UnknownExperiment(_) => ExitStatus::UnknownExperiment,
        }
    }

    pub fn io(path: impl Into<PathBuf>, err: std::io::Error) -> CliError {
        let path = path.into();
        if err.kind() == std::io::ErrorKind::NotFound {
            CliError::MissingFile(path)
        } else {
            CliError::Io {
                path,
                message: err.to_string(),
            }
        }
    }

    pub fn corrupt(path: impl Into<PathBuf>, message: impl Into<String>) -> CliError {
        CliError::CorruptData {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> CliError {
        match &e {
            CoreError::DegeneratePatch | CoreError::SingularWarp { .. } => {
                CliError::Solver(e.to_string())
            }
            _ => CliError::Validation(e.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
