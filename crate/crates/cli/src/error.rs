use std::fmt;
use std::path::Path;

use csflow::CsFlowError;

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// An error with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: EXIT_USAGE, message: message.into() }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self { code: EXIT_RUNTIME, message: message.into() }
    }

    pub fn from_config(e: CsFlowError) -> Self {
        Self::usage(e.to_string())
    }

    /// Usage error unless `path` exists.
    pub fn require_input(path: &Path, what: &str) -> Result<(), Self> {
        if path.exists() {
            Ok(())
        } else {
            Err(Self::usage(format!("{what} not found: {}", path.display())))
        }
    }
}

impl From<CsFlowError> for CliError {
    fn from(e: CsFlowError) -> Self {
        let code = match &e {
            CsFlowError::InvalidConfig(_) | CsFlowError::ShapeMismatch(_) => EXIT_USAGE,
            _ => EXIT_RUNTIME,
        };
        Self { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::runtime(format!("I/O error: {e}"))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}
