use thiserror::Error;

/// Errors raised by the workbench.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Invalid generation or analysis parameters (T <= 0, L = 0, ...).
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Inputs that are individually valid but inconsistent with each other.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A logit evaluated to a non-finite value.
    #[error("model evaluation failed: {0}")]
    ModelEvaluation(String),

    /// Exhaustive enumeration would exceed the configured state cap.
    #[error("enumeration too large: {states} states exceeds the cap of {cap}")]
    EnumerationTooLarge { states: u128, cap: u64 },

    /// Malformed or inconsistent input file contents.
    #[error("input error: {0}")]
    Input(String),

    /// Root finding or optimization failure.
    #[error("solver error: {0}")]
    Solver(String),

    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
