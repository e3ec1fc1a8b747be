//! The long probe pulse: trapezoidal shape, timing and its constraints
//! against the fiber length.

use serde::{Deserialize, Serialize};

use crate::error::{OtdrError, Result, Violation};
use crate::fiber_link::{FiberLink, SPEED_OF_LIGHT};

/// Gaussian time-bandwidth product used for transform-limited estimates.
pub const GAUSSIAN_TIME_BANDWIDTH: f64 = 0.44;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbePulse {
    /// Full pulse duration τ from the start of the rise to the end of the fall.
    pub width: f64,
    pub period: f64,
    pub rise_edge: f64,
    pub fall_edge: f64,
    pub peak_power: f64,
    pub wavelength_nm: f64,
    pub linewidth_nm: f64,
    /// Offset from the electrical trigger to the optical pulse start.
    pub trigger_delay: f64,
}

impl ProbePulse {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(OtdrError::InvalidPulse(m.to_string()));
        if !(self.rise_edge >= 0.0 && self.fall_edge >= 0.0) {
            return bad("edges must be ≥ 0");
        }
        if !(self.width > self.rise_edge + self.fall_edge) || !self.width.is_finite() {
            return bad("width must exceed rise_edge + fall_edge");
        }
        if !(self.period >= 2.0 * self.width) || !self.period.is_finite() {
            return bad("period must be at least twice the width");
        }
        if !(self.peak_power > 0.0) {
            return bad("peak power must be > 0");
        }
        if !(self.wavelength_nm > 0.0) {
            return bad("wavelength must be > 0");
        }
        if !(self.linewidth_nm >= 0.0) {
            return bad("linewidth must be ≥ 0");
        }
        if !self.trigger_delay.is_finite() {
            return bad("trigger delay must be finite");
        }
        Ok(())
    }

    /// Relative launch power in `[0, 1]` at trigger-referenced time `t`.
    pub fn shape(&self, t: f64) -> f64 {
        trapezoid_value(
            (t - self.trigger_delay).rem_euclid(self.period),
            self.rise_edge,
            self.width,
            self.fall_edge,
        )
    }

    /// Area of one pulse in units of `peak_power · s`.
    pub fn area(&self) -> f64 {
        self.width - 0.5 * (self.rise_edge + self.fall_edge)
    }

    /// Checks that only one pulse traverses the fiber at a time.
    pub fn validate_against_link(&self, link: &FiberLink) -> LinkValidation {
        let round_trip = link.round_trip_time();
        let mut violations = Vec::new();
        if self.width < round_trip {
            violations.push(Violation::WidthBelowRoundTrip {
                width: self.width,
                round_trip,
            });
        }
        if self.period < 2.0 * self.width {
            violations.push(Violation::PeriodBelowTwiceWidth {
                period: self.period,
                width: self.width,
            });
        }
        LinkValidation {
            round_trip,
            violations,
        }
    }
}

pub(crate) fn trapezoid_value(y: f64, rise: f64, width: f64, fall: f64) -> f64 {
    if y < 0.0 || y >= width {
        0.0
    } else if y < rise {
        y / rise
    } else if y <= width - fall {
        1.0
    } else {
        (width - y) / fall
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkValidation {
    pub round_trip: f64,
    pub violations: Vec<Violation>,
}

impl LinkValidation {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<f64> {
        if self.passed() {
            Ok(self.round_trip)
        } else {
            Err(OtdrError::Constraint(self.violations))
        }
    }
}

/// Spectral width of a transform-limited pulse, nm.
pub fn transform_limited_linewidth(pulse_width: f64, wavelength_nm: f64) -> Result<f64> {
    transform_limited_linewidth_with(pulse_width, wavelength_nm, GAUSSIAN_TIME_BANDWIDTH)
}

pub fn transform_limited_linewidth_with(
    pulse_width: f64,
    wavelength_nm: f64,
    time_bandwidth: f64,
) -> Result<f64> {
    if !(pulse_width > 0.0) {
        return Err(OtdrError::InvalidArgument("pulse width must be > 0".into()));
    }
    let dnu = time_bandwidth / pulse_width;
    let lambda = wavelength_nm * 1e-9;
    Ok(lambda * lambda * dnu / SPEED_OF_LIGHT * 1e9)
}
