use std::fmt;
use std::process::ExitCode;

use pcl_core::Error;

/// Failure with its process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_MISSING_INPUT: u8 = 2;
pub const EXIT_CAPTIONER: u8 = 3;
pub const EXIT_TRAINING: u8 = 4;
pub const EXIT_EMPTY: u8 = 5;

impl CliError {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        CliError {
            code,
            message: message.into(),
        }
    }

    pub fn config(message: impl fmt::Display) -> Self {
        CliError::new(EXIT_CONFIG, message.to_string())
    }

    pub fn missing(message: impl fmt::Display) -> Self {
        CliError::new(EXIT_MISSING_INPUT, message.to_string())
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.code)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::CaptionerUnavailable(_) | Error::InsufficientDiversity { .. } | Error::NotImplementedStyle(_) => {
                EXIT_CAPTIONER
            }
            Error::TrainingDiverged { .. } => EXIT_TRAINING,
            Error::EmptyProposals => EXIT_EMPTY,
            Error::Io { .. } | Error::Parse { .. } | Error::Format(_) | Error::Integrity(_) => EXIT_MISSING_INPUT,
            _ => EXIT_CONFIG,
        };
        CliError::new(code, e.to_string())
    }
}
