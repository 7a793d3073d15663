use std::path::Path;

use durel_core::agreement::AgreementError;
use durel_core::corpus::CorpusError;
use durel_core::judgments::JudgmentError;
use durel_core::measures::MeasureError;
use durel_core::sampling::SamplingError;
use durel_service::ServiceError;
use thiserror::Error;

/// Failure of a subcommand. I/O problems exit with 1, everything the user can
/// fix in their inputs exits with 2.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Invalid(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Invalid(_) => 2,
        }
    }

    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Io(m) => CliError::Io(m),
            other => CliError::Invalid(other.to_string()),
        }
    }
}

impl From<SamplingError> for CliError {
    fn from(e: SamplingError) -> Self {
        match e {
            SamplingError::Io(m) => CliError::Io(m),
            other => CliError::Invalid(other.to_string()),
        }
    }
}

impl From<JudgmentError> for CliError {
    fn from(e: JudgmentError) -> Self {
        match e {
            JudgmentError::Io(m) => CliError::Io(m),
            other => CliError::Invalid(other.to_string()),
        }
    }
}

impl From<MeasureError> for CliError {
    fn from(e: MeasureError) -> Self {
        match e {
            MeasureError::Io(m) => CliError::Io(m),
            other => CliError::Invalid(other.to_string()),
        }
    }
}

impl From<AgreementError> for CliError {
    fn from(e: AgreementError) -> Self {
        CliError::Invalid(e.to_string())
    }
}

impl From<ServiceError> for CliError {
    fn from(e: ServiceError) -> Self {
        match e {
            ServiceError::Io(e) => CliError::Io(e.to_string()),
            other => CliError::Invalid(other.to_string()),
        }
    }
}

/// Adds the path to I/O errors of a core operation.
pub fn at<T, E: Into<CliError>>(path: &Path, r: Result<T, E>) -> Result<T, CliError> {
    r.map_err(|e| match e.into() {
        CliError::Io(m) => CliError::Io(format!("{}: {m}", path.display())),
        CliError::Invalid(m) => CliError::Invalid(format!("{}: {m}", path.display())),
    })
}
