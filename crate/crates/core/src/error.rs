use std::io;

use thiserror::Error;

/// Errors produced while building, solving or simulating sampling instances.
#[derive(Debug, Error)]
pub enum Error {
    #[error("duplicate switch id `{0}`")]
    DuplicateSwitch(String),

    #[error("duplicate flow id `{0}`")]
    DuplicateFlow(String),

    #[error("flow `{flow}`: path references unknown switch `{switch}`")]
    UnknownSwitch { flow: String, switch: String },

    #[error("flow `{flow}`: switch `{switch}` appears more than once on the path")]
    RepeatedSwitch { flow: String, switch: String },

    #[error("flow `{0}`: path is empty")]
    EmptyPath(String),

    #[error("invalid value for `{field}`: {reason}")]
    InvalidField { field: String, reason: String },

    #[error("unknown flow `{0}`")]
    UnknownFlow(String),

    #[error("unknown switch `{0}`")]
    UnknownSwitchId(String),

    #[error("flow `{flow}` assigned to switch `{switch}` which is not on its path")]
    OffPathAssignment { flow: String, switch: String },

    #[error("allocation covers {found} flows but the network has {expected}")]
    AllocationSize { expected: usize, found: usize },

    #[error("{0} must not be empty")]
    Empty(&'static str),

    #[error("instance needs {size:.0} enumerations, budget is {budget}")]
    EnumerationBudget { size: f64, budget: u64 },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("rate process covers {available} buckets, simulation needs {needed}")]
    HorizonTooShort { needed: usize, available: usize },

    #[error("configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::InvalidField {
        field: field.into(),
        reason: reason.into(),
    }
}
