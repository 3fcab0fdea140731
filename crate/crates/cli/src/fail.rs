//! Exit-code contract: 0 success, 2 usage or config, 3 I/O, 4 strict
//! non-convergence, 1 anything else.

use std::fmt;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self {
            code: 3,
            message: message.into(),
        }
    }

    pub fn not_converged(message: impl Into<String>) -> Self {
        Self {
            code: 4,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<mclab::Error> for CliError {
    fn from(e: mclab::Error) -> Self {
        use mclab::Error::*;
        let code = match &e {
            Io { .. } => 3,
            InvalidParameter(_) | DimensionMismatch { .. } | Format { .. } => 2,
            Numerical(_) => 1,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}
