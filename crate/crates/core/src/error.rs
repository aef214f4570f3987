//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Matrix/vector shape is empty or inconsistent with the operation.
    #[error("shape error: {0}")]
    Shape(String),

    /// An argument is outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Configuration failed validation; the message names the offending field.
    #[error("config error: {field}: {message}")]
    Config { field: String, message: String },

    /// A dataset file could not be parsed.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Training aborted (NaN loss/gradient, divergent coefficients, ...).
    /// `task` is the zero-based slot index when the failure happened inside a
    /// task sequence.
    #[error("training error{}: {message}", task.map(|t| format!(" (task {t})")).unwrap_or_default())]
    Training { task: Option<usize>, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn training(task: Option<usize>, message: impl Into<String>) -> Self {
        Error::Training {
            task,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
