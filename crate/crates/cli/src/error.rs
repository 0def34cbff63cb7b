use std::fmt;

use sns_core::error::ErrorClass;
use sns_core::SnsError;

/// A failed command, carrying its exit-code class.
#[derive(Debug)]
pub struct CliError {
    pub class: ErrorClass,
    pub message: String,
}

impl CliError {
    pub fn parse(message: impl Into<String>) -> Self {
        CliError { class: ErrorClass::Parse, message: message.into() }
    }

    pub fn contract(message: impl Into<String>) -> Self {
        CliError { class: ErrorClass::Contract, message: message.into() }
    }

    pub fn exit_code(&self) -> u8 {
        match self.class {
            ErrorClass::Parse => 2,
            ErrorClass::Contract => 3,
            ErrorClass::Numerical => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<SnsError> for CliError {
    fn from(e: SnsError) -> Self {
        CliError { class: e.class(), message: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::parse(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::parse(format!("json: {e}"))
    }
}

pub type CliResult<T> = Result<T, CliError>;
