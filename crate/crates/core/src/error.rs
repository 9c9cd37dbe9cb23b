use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    /// Evaluation left the model's domain (division by zero in `h`, log of a
    /// non-positive number, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Output map evaluated outside its admissible region.
    #[error("output domain error at x = {x:?}: {reason}")]
    OutputDomain { x: Vec<f64>, reason: String },

    #[error("non-finite result in {0}")]
    NonFinite(&'static str),

    /// Integration produced a non-finite state.
    #[error("integration diverged at t = {time}")]
    Divergence { time: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("riccati solver failed: {0}")]
    Riccati(String),

    #[error("segment {segment}: {source}")]
    Segment {
        segment: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("step recovery exhausted after {attempts} halvings: {last}")]
    StepRecovery { attempts: usize, last: Box<Error> },
}

impl Error {
    /// Numerical failures are the ones an optimizer may recover from by
    /// shrinking its step.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Domain(_)
            | Error::OutputDomain { .. }
            | Error::NonFinite(_)
            | Error::Divergence { .. }
            | Error::StepRecovery { .. } => true,
            Error::Segment { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    pub(crate) fn dim(context: &'static str, expected: usize, actual: usize) -> Self {
        Error::Dimension {
            context,
            expected,
            actual,
        }
    }
}

pub(crate) fn check_len(context: &'static str, expected: usize, v: &[f64]) -> Result<()> {
    if v.len() != expected {
        return Err(Error::dim(context, expected, v.len()));
    }
    Ok(())
}
