//! Crate-wide error type.

use std::fmt;

/// Everything that can go wrong across the toolkit.
///
/// Numerical infeasibility (a divergent exponential moment, a failed
/// admissibility scan) is deliberately kept distinct from caller mistakes
/// (bad parameters, violated preconditions) so the CLI can map the former to
/// check failures and the latter to configuration errors.
#[derive(Debug)]
pub enum Error {
    /// `E[e^{sZ}]` was requested at an argument outside the domain of the
    /// claim law's moment generating function.
    DivergentMgf { argument: f64 },
    /// The geometric scan found no point where the existence gate drops
    /// below 1/2.
    NoAdmissibleBeta { phi: f64, min_value: f64 },
    /// A Monte Carlo path produced a nonfinite statistic, which signals an
    /// inadmissible model/effort configuration rather than a numerics bug.
    NonfiniteSample { path: u64, what: &'static str },
    /// A jump-field integral did not evaluate to a finite number.
    NonfiniteIntegral { context: &'static str },
    /// The requested method's hypotheses do not hold for the given inputs.
    NotApplicable { reason: String },
    /// A value rejected at construction time.
    InvalidParameter { what: String },
    /// An operation precondition violated by the caller.
    Precondition { what: String },
    /// Config file problem, anchored to a 1-based line when known.
    Config { line: Option<usize>, message: String },
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DivergentMgf { argument } => {
                write!(f, "divergent exponential moment at argument {argument}")
            }
            Error::NoAdmissibleBeta { phi, min_value } => write!(
                f,
                "no admissible scan point for phi = {phi}: scan minimum {min_value} >= 1/2"
            ),
            Error::NonfiniteSample { path, what } => {
                write!(f, "nonfinite {what} on path {path}")
            }
            Error::NonfiniteIntegral { context } => {
                write!(f, "nonfinite integral while evaluating {context}")
            }
            Error::NotApplicable { reason } => write!(f, "method not applicable: {reason}"),
            Error::InvalidParameter { what } => write!(f, "invalid parameter: {what}"),
            Error::Precondition { what } => write!(f, "precondition violated: {what}"),
            Error::Config { line: Some(n), message } => {
                write!(f, "config error at line {n}: {message}")
            }
            Error::Config { line: None, message } => write!(f, "config error: {message}"),
            Error::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}
