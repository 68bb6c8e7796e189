use std::fmt;

use pod_sentry::diagnosis::DiagnosisError;
use pod_sentry::eval::EvalError;
use pod_sentry::preprocess::PreprocessError;
use pod_sentry::trainlog::TrainLogError;
use pod_sentry::{BackendError, FormatError};
use pod_sentry_service::ServiceError;

/// Exit statuses shared by every subcommand.
pub const EXIT_OK: u8 = 0;
pub const EXIT_DATA: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_IO: u8 = 3;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration.
    Usage(String),
    /// Input data is malformed or fails a check.
    Data(String),
    /// A file or socket could not be read or written.
    Io(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Data(_) => EXIT_DATA,
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Io(_) => EXIT_IO,
        }
    }

    pub fn io(path: &std::path::Path, e: impl fmt::Display) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Io(m) => f.write_str(m),
        }
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        match e {
            FormatError::Io { .. } => CliError::Io(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<PreprocessError> for CliError {
    fn from(e: PreprocessError) -> Self {
        match e {
            PreprocessError::Io { .. } => CliError::Io(e.to_string()),
            PreprocessError::Format(f) => f.into(),
            PreprocessError::BadRatio(_) | PreprocessError::BadTarget => CliError::Usage(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Config(_) => CliError::Usage(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<TrainLogError> for CliError {
    fn from(e: TrainLogError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<DiagnosisError> for CliError {
    fn from(e: DiagnosisError) -> Self {
        match e {
            DiagnosisError::Format(f) => f.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<BackendError> for CliError {
    fn from(e: BackendError) -> Self {
        match e {
            BackendError::MissingParameter { .. }
            | BackendError::BadParameter { .. }
            | BackendError::UnknownKind(_) => CliError::Usage(e.to_string()),
            BackendError::Load(f) => f.into(),
            BackendError::Transport(_) => CliError::Io(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<ServiceError> for CliError {
    fn from(e: ServiceError) -> Self {
        match e {
            ServiceError::Config(_) => CliError::Usage(e.to_string()),
            ServiceError::Io { .. } => CliError::Io(e.to_string()),
            ServiceError::Backend { source, .. } => source.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}
