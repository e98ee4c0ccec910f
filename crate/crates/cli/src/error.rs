use std::fmt;

use serde::Serialize;
use symdiff_core::dataset::DatasetError;
use symdiff_core::metrics::ReportError;
use symdiff_nn::NnError;

/// Failure class, which fixes the process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorKind {
    Usage,
    Data,
    Numerical,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Usage => 1,
            ErrorKind::Data => 2,
            ErrorKind::Numerical => 3,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { kind: ErrorKind::Usage, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self { kind: ErrorKind::Data, message: message.into() }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Self { kind: ErrorKind::Numerical, message: message.into() }
    }

    pub fn io(path: &std::path::Path, e: impl fmt::Display) -> Self {
        Self::data(format!("{}: {e}", path.display()))
    }

    /// One-line JSON for stderr.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Line<'a> {
            error: ErrorKind,
            exit_code: i32,
            message: &'a str,
        }
        serde_json::to_string(&Line { error: self.kind, exit_code: self.kind.exit_code(), message: &self.message }).expect("plain struct serializes")
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} error: {}", self.kind, self.message)
    }
}

impl std::error::Error for CliError {}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::InvalidConfig(_) => Self::usage(e.to_string()),
            _ => Self::data(e.to_string()),
        }
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        Self::data(e.to_string())
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::InvalidConfig(_) => Self::usage(e.to_string()),
            NnError::NonFiniteLoss { .. } | NnError::Tensor(_) | NnError::UnnormalizedInput { .. } => Self::numerical(e.to_string()),
            NnError::Dataset(inner) => inner.into(),
            _ => Self::data(e.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
