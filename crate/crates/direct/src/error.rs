//! Error classification shared by the library and the CLI exit-code policy.

use thiserror::Error;

/// Top-level error kinds. The CLI maps these onto exit codes:
/// usage errors exit 1, data errors exit 2, runtime/numeric failures exit 3.
#[derive(Debug, Error)]
pub enum DirectError {
    #[error("usage error: {0}")]
    Usage(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("runtime error: {0}")]
    Runtime(String),
}

impl DirectError {
    pub fn exit_code(&self) -> i32 {
        match self {
            DirectError::Usage(_) => 1,
            DirectError::Data(_) => 2,
            DirectError::Runtime(_) => 3,
        }
    }
}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    DirectError::Usage(msg.into()).into()
}

pub fn data(msg: impl Into<String>) -> anyhow::Error {
    DirectError::Data(msg.into()).into()
}

pub fn runtime(msg: impl Into<String>) -> anyhow::Error {
    DirectError::Runtime(msg.into()).into()
}
