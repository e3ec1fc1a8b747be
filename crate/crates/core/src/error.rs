use std::fmt;

use thiserror::Error;

/// A physical constraint between the probe pulse and the link that failed.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// `τ < 2L/v_g`: the pulse does not outlast one fiber round trip.
    WidthBelowRoundTrip { width: f64, round_trip: f64 },
    /// `T < 2τ`: more than one pulse would traverse the fiber at a time.
    PeriodBelowTwiceWidth { period: f64, width: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::WidthBelowRoundTrip { width, round_trip } => write!(
                f,
                "τ < 2L/v_g: pulse width {width:e} s is shorter than the round trip {round_trip:e} s (need τ ≥ 2L/v_g)"
            ),
            Violation::PeriodBelowTwiceWidth { period, width } => write!(
                f,
                "T < 2τ: period {period:e} s is shorter than twice the pulse width {width:e} s (need T ≥ 2τ)"
            ),
        }
    }
}

#[derive(Debug, Error)]
pub enum OtdrError {
    #[error("invalid fiber link: {0}")]
    InvalidLink(String),
    #[error("invalid probe pulse: {0}")]
    InvalidPulse(String),
    #[error("invalid detector: {0}")]
    InvalidDetector(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("pulse/link constraint violated: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Constraint(Vec<Violation>),
    #[error("histogram coverage: {0}")]
    Coverage(String),
    #[error("histogram configuration mismatch: {0}")]
    ConfigMismatch(String),
    #[error("detector saturated: measured rate {rate} cps with dead time {dead_time} s (rate·dead_time ≥ 1)")]
    Saturation { rate: f64, dead_time: f64 },
    #[error("rate function exceeded its bound: {value} > {bound} at t = {time} s")]
    UnboundedRate { value: f64, bound: f64, time: f64 },
    #[error("analysis: {0}")]
    Analysis(String),
    #[error("config: {0}")]
    Config(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl OtdrError {
    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            OtdrError::Config(_) | OtdrError::Parse { .. } => 2,
            OtdrError::InvalidLink(_)
            | OtdrError::InvalidPulse(_)
            | OtdrError::InvalidDetector(_)
            | OtdrError::Constraint(_)
            | OtdrError::Coverage(_)
            | OtdrError::Saturation { .. } => 3,
            _ => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, OtdrError>;
