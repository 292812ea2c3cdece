//! Exit-code carrying error.

use std::fmt;

use superbunch_core::Error;

pub const IO: u8 = 1;
pub const VALIDATION: u8 = 2;
pub const ANALYSIS: u8 = 3;
pub const FIT: u8 = 4;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn new(code: u8, error: impl Into<anyhow::Error>) -> Self {
        Failure {
            code,
            error: error.into(),
        }
    }

    pub fn msg(code: u8, msg: impl fmt::Display) -> Self {
        Failure::new(code, anyhow::anyhow!("{msg}"))
    }
}

pub type Outcome<T> = Result<T, Failure>;

pub trait Context<T> {
    /// Attaches an exit code and a context line.
    fn code(self, code: u8, what: &str) -> Outcome<T>;
}

impl<T, E: Into<anyhow::Error>> Context<T> for Result<T, E> {
    fn code(self, code: u8, what: &str) -> Outcome<T> {
        self.map_err(|e| Failure::new(code, e.into().context(what.to_string())))
    }
}

/// Exit code for a core error raised while reading or analyzing data.
pub fn analysis_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => VALIDATION,
        Error::Io(_) => IO,
        _ => ANALYSIS,
    }
}

pub fn config_error(violations: &[superbunch_core::model::ConfigViolation]) -> Failure {
    let lines: Vec<String> = violations.iter().map(|v| format!("  - {v}")).collect();
    Failure::msg(VALIDATION, format!("invalid configuration:\n{}", lines.join("\n")))
}
