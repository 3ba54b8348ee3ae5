use std::fmt;

use par::Error;

/// A command failure with its process exit code.
#[derive(Debug)]
pub struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self { code: 3, message: message.into() }
    }

    pub fn checkpoint(message: impl Into<String>) -> Self {
        Self { code: 4, message: message.into() }
    }

    pub fn code(&self) -> u8 {
        self.code
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

/// Library errors sorted into configuration, data and checkpoint failures.
/// Anything else is a data problem by default: the inputs are the only
/// thing the user controls.
impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        match e {
            Error::Config(_) => Self::config(message),
            Error::Checkpoint(_) => Self::checkpoint(message),
            _ => Self::data(message),
        }
    }
}

/// Everything that goes wrong while loading a checkpoint is a checkpoint
/// failure, including I/O.
pub fn checkpoint_error(e: Error) -> Failure {
    Failure::checkpoint(e.to_string())
}

pub fn io_error(path: &std::path::Path, e: std::io::Error) -> Failure {
    Failure::data(format!("{}: {e}", path.display()))
}
