use std::fmt;

use serde::Serialize;

/// Failure classes, each with its own exit status.
#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    /// Malformed scenario, bad arguments, inconsistent dimensions.
    Validation(String),
    /// Divergence, domain violations, failed Riccati solves.
    Numerical(String),
    /// A segment optimization hit its iteration cap under `--require-convergence`.
    NonConvergence(String),
    /// A verification command ran to completion but a check did not hold.
    CheckFailed(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::NonConvergence(_) => 4,
            CliError::CheckFailed(_) | CliError::Io(_) => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Validation(_) => "validation",
            CliError::Numerical(_) => "numerical",
            CliError::NonConvergence(_) => "non-convergence",
            CliError::CheckFailed(_) => "check-failed",
            CliError::Io(_) => "io",
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Validation(m)
            | CliError::Numerical(m)
            | CliError::NonConvergence(m)
            | CliError::CheckFailed(m)
            | CliError::Io(m) => m,
        }
    }

    /// Single-line JSON written to stderr on failure.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Body<'a> {
            kind: &'a str,
            message: &'a str,
            exit_code: i32,
        }
        #[derive(Serialize)]
        struct Wrapper<'a> {
            error: Body<'a>,
        }
        serde_json::to_string(&Wrapper {
            error: Body {
                kind: self.kind(),
                message: self.message(),
                exit_code: self.exit_code(),
            },
        })
        .expect("plain strings serialize")
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind(), self.message())
    }
}

impl std::error::Error for CliError {}

impl From<obsgain::Error> for CliError {
    fn from(e: obsgain::Error) -> Self {
        if e.is_numerical() || is_riccati(&e) {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Validation(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

fn is_riccati(e: &obsgain::Error) -> bool {
    match e {
        obsgain::Error::Riccati(_) => true,
        obsgain::Error::Segment { source, .. } => is_riccati(source),
        _ => false,
    }
}

pub type CliResult<T> = Result<T, CliError>;
