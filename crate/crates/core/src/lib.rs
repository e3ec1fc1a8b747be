//! Photon-counting OTDR simulation and trace analysis.
//!
//! Validation uses `!(x > 0.0)` style checks throughout so NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod dispersion;
pub mod error;
pub mod fiber_link;
pub mod photon_detector;
pub mod pipeline;
pub mod plot;
pub mod presets;
pub mod probe_pulse;
pub mod response;
pub mod tdc_histogram;
pub mod trace_analysis;
pub mod trace_processing;
