use std::fmt;
use std::path::Path;

/// Process exit codes.
pub mod code {
    pub const RUNTIME: u8 = 1;
    pub const USAGE: u8 = 2;
    pub const IO: u8 = 3;
    pub const MALFORMED: u8 = 4;
    pub const VERIFY: u8 = 5;
}

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        Self::new(code::IO, format!("{}: {err}", path.display()))
    }

    pub fn missing(path: &Path) -> Self {
        Self::new(code::IO, format!("{}: no such file", path.display()))
    }

    pub fn context(path: &Path, err: dwrl_core::Error) -> Self {
        let mut e = Self::from(err);
        e.message = format!("{}: {}", path.display(), e.message);
        e
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<dwrl_core::Error> for CliError {
    fn from(err: dwrl_core::Error) -> Self {
        use dwrl_core::Error as E;
        let code = match &err {
            E::Io(_) => code::IO,
            E::Config(_) | E::Parse { .. } | E::DimensionMismatch { .. } | E::InvalidToken { .. } => code::MALFORMED,
            _ => code::RUNTIME,
        };
        Self::new(code, err.to_string())
    }
}
