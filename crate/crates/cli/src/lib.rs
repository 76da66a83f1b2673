//! Batch front end: configuration loading, the five commands and exit codes.

pub mod commands;
pub mod config;

use std::fmt;

/// Exit code classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Numerical,
    Statistical,
    Io,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self { kind: ErrorKind::Config, message: message.into() }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            ErrorKind::Config => 2,
            ErrorKind::Numerical => 3,
            ErrorKind::Statistical => 4,
            ErrorKind::Io => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<driftlab::Error> for CliError {
    fn from(e: driftlab::Error) -> Self {
        use driftlab::Error as E;
        let kind = match &e {
            E::Parameter(_) | E::Dimension { .. } | E::Grid(_) | E::Index(_) | E::Input(_) => ErrorKind::Config,
            E::Statistical(_) => ErrorKind::Statistical,
            E::Io(_) | E::Json(_) | E::Csv(_) => ErrorKind::Io,
            _ if e.is_numerical() => ErrorKind::Numerical,
            _ => ErrorKind::Io,
        };
        Self { kind, message: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self { kind: ErrorKind::Io, message: e.to_string() }
    }
}
