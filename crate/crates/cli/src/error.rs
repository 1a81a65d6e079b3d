use std::fmt;

use dpgenlab_core::Error;
use serde::Serialize;

/// Failure of a CLI run, carrying its process exit code.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CliError {
    pub kind: &'static str,
    pub code: i32,
    pub message: String,
}

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INPUT: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;
pub const EXIT_CAP: i32 = 5;

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            kind: "usage",
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn input(message: impl Into<String>) -> Self {
        Self {
            kind: "input",
            code: EXIT_INPUT,
            message: message.into(),
        }
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        Self {
            kind: "numeric",
            code: EXIT_NUMERIC,
            message: message.into(),
        }
    }

    /// One-line JSON record for stderr.
    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self }).to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} error: {}", self.kind, self.message)
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        match e {
            Error::Config(_) | Error::Argument(_) => Self::usage(message),
            Error::Input(_) | Error::Io { .. } => Self::input(message),
            Error::ModelEvaluation(_) | Error::Solver(_) => Self::numeric(message),
            Error::EnumerationTooLarge { .. } => Self {
                kind: "enumeration_cap",
                code: EXIT_CAP,
                message,
            },
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
