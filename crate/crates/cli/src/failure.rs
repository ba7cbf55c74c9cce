//! Failures and the exit-code contract.

use std::fmt;

use frontsteer_core::Error;

/// 0 success, 1 a check failed or the solver did not converge, 2 bad
/// configuration, 3 I/O, 4 numeric breakdown.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Io(String),
    Numeric(String),
}

impl Failure {
    pub fn from_core(e: Error) -> Self {
        match e {
            Error::Parameter(m) | Error::Index(m) => Failure::Config(m),
            Error::Format(m) => Failure::Io(m),
            Error::Io(e) => Failure::Io(e.to_string()),
            Error::Numeric(m) => Failure::Numeric(m),
        }
    }

    /// Maps a core error met while assembling inputs.
    pub fn config(e: Error) -> Self {
        Self::from_core(e)
    }

    pub fn context(self, what: &str) -> Self {
        match self {
            Failure::Config(m) => Failure::Config(format!("{what}: {m}")),
            Failure::Io(m) => Failure::Io(format!("{what}: {m}")),
            Failure::Numeric(m) => Failure::Numeric(format!("{what}: {m}")),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::Io(_) => 3,
            Failure::Numeric(_) => 4,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "configuration error: {m}"),
            Failure::Io(m) => write!(f, "i/o error: {m}"),
            Failure::Numeric(m) => write!(f, "numeric error: {m}"),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}
