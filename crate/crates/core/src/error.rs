use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by every fallible operation in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("capacity exceeded: {what} is {actual}, limit is {limit}")]
    Capacity {
        what: &'static str,
        actual: usize,
        limit: usize,
    },

    #[error("no defective set is consistent with the observed outcomes")]
    Infeasible,

    #[error("conditional probability undefined: P[D_{item}] = 0")]
    UndefinedConditional { item: usize },

    #[error("design has {count} test(s) with fewer than two items (first: test {first}); clean it first")]
    MustCleanFirst { count: usize, first: usize },

    #[error("invariant violated: {0}")]
    InvariantViolation(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization: {0}")]
    Serialization(String),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Process exit code used by the CLI: 2 for bad parameters or input,
    /// 3 for capacity limits, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParameter(_)
            | Error::InvalidInput(_)
            | Error::Parse { .. }
            | Error::MustCleanFirst { .. }
            | Error::UndefinedConditional { .. }
            | Error::Infeasible => 2,
            Error::Capacity { .. } => 3,
            Error::InvariantViolation(_) | Error::Io { .. } | Error::Serialization(_) => 1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
