//! Ready-made experiments.
//!
//! `exp-100m` and `exp-50km` reproduce the two demonstration setups; their
//! period counts are calibrated so the expected dynamic range matches the
//! reported one. `dispersion-50km` drives the short-pulse comparison.

use crate::config::{
    AcquisitionSpec, DetectorSpec, DispersionSpec, ExperimentConfig, HistogramSpec, LinkSpec,
    ProcessingSpec, PulseSpec, ReflectorSpec, SegmentSpec, SCHEMA_VERSION,
};
use crate::error::{OtdrError, Result};
use crate::fiber_link::ReflectorKind;
use crate::pipeline::calibrate_periods;
use crate::tdc_histogram::Fidelity;
use crate::trace_analysis::AnalysisOptions;

#[derive(Debug, Clone, Copy)]
pub struct PresetInfo {
    pub name: &'static str,
    pub summary: &'static str,
    /// Values not fixed by the measured setup.
    pub assumptions: &'static [&'static str],
}

pub const PRESETS: &[PresetInfo] = &[
    PresetInfo {
        name: "exp-100m",
        summary: "54 + 20 + 20 + 2 m of SMF, 1.5 µs pulses every 3 µs, 200 ps bins",
        assumptions: &[
            "launch connector at 0 m plus connectors at 54, 74 and 94 m: R = -45 dB, 0.2 dB loss",
            "fiber end at 96 m with R = -30 dB",
            "1 mW peak launch power, 1e-4 nm linewidth",
            "attenuator set for 0.04 % dead-time loss at the plateau",
            "periods calibrated for 10.3 dB dynamic range at lag 1",
        ],
    },
    PresetInfo {
        name: "exp-50km",
        summary: "about 50 km of SMF, 550 µs pulses every 1.2 ms, 16384-bin TDC",
        assumptions: &[
            "length 49997.93 m, so both end echoes share one bin phase",
            "connectors at both ends: R = -45 dB, 0.2 dB loss",
            "1 mW peak launch power, 1e-4 nm linewidth",
            "attenuator set for 1 % dead-time loss at the plateau",
            "periods calibrated for 27.16 dB dynamic range at lag 1",
        ],
    },
    PresetInfo {
        name: "dispersion-50km",
        summary: "50 km of SMF with identical connectors at 1 km and 49 km, 10 ps windows",
        assumptions: &[
            "D = 17 ps/(nm km)",
            "short-pulse probe: Gaussian, FWHM twice the bin width, transform limited",
            "noiseless (analytic) counts",
        ],
    },
];

/// Bins of round trip in the 50 km preset.
const LONG_ROUND_TRIP_BINS: f64 = 6821.0;
const LONG_BIN_WIDTH: f64 = 73.3e-9;

fn smf(length_m: f64) -> SegmentSpec {
    SegmentSpec {
        length_m,
        ..SegmentSpec::default()
    }
}

fn reflector(kind: ReflectorKind, position_m: f64) -> ReflectorSpec {
    ReflectorSpec {
        kind,
        position_m,
        reflectance: None,
        insertion_loss_db: None,
    }
}

fn pulse(width: f64, period: f64) -> PulseSpec {
    PulseSpec {
        width,
        period,
        rise_edge: 2.5e-9,
        fall_edge: 2.5e-9,
        peak_power: 1e-3,
        wavelength_nm: 1539.77,
        linewidth_nm: 1e-4,
        trigger_delay: 0.0,
    }
}

fn base(name: &str, link: LinkSpec, pulse: PulseSpec) -> ExperimentConfig {
    ExperimentConfig {
        schema_version: SCHEMA_VERSION,
        name: Some(name.to_string()),
        description: PRESETS
            .iter()
            .find(|p| p.name == name)
            .map(|p| p.summary.to_string()),
        link,
        pulse,
        detector: DetectorSpec::default(),
        histogram: HistogramSpec::default(),
        acquisition: AcquisitionSpec::default(),
        processing: ProcessingSpec::default(),
        analysis: AnalysisOptions::default(),
        dispersion: None,
    }
}

fn calibrated(mut c: ExperimentConfig, target_db: f64) -> Result<ExperimentConfig> {
    c.acquisition.periods = calibrate_periods(&c.build()?, 1, target_db)?;
    Ok(c)
}

pub fn exp_100m() -> Result<ExperimentConfig> {
    let mut end = reflector(ReflectorKind::OpenEnd, 96.0);
    end.reflectance = Some(1e-3);
    let link = LinkSpec {
        segments: vec![smf(54.0), smf(20.0), smf(20.0), smf(2.0)],
        reflectors: vec![
            reflector(ReflectorKind::Connector, 0.0),
            reflector(ReflectorKind::Connector, 54.0),
            reflector(ReflectorKind::Connector, 74.0),
            reflector(ReflectorKind::Connector, 94.0),
            end,
        ],
    };
    let mut c = base("exp-100m", link, pulse(1.5e-6, 3e-6));
    c.histogram.bin_width = 200e-12;
    c.detector.linearity_target = 4e-4;
    calibrated(c, 10.3)
}

pub fn exp_50km() -> Result<ExperimentConfig> {
    let length =
        LONG_ROUND_TRIP_BINS * LONG_BIN_WIDTH * SegmentSpec::default().group_velocity / 2.0;
    let length = (length * 100.0).round() / 100.0;
    let link = LinkSpec {
        segments: vec![smf(length)],
        reflectors: vec![
            reflector(ReflectorKind::Connector, 0.0),
            reflector(ReflectorKind::Connector, length),
        ],
    };
    let mut c = base("exp-50km", link, pulse(550e-6, 1.2e-3));
    c.processing.lags = vec![1, 16, 32];
    calibrated(c, 27.16)
}

pub fn dispersion_50km() -> Result<ExperimentConfig> {
    let link = LinkSpec {
        segments: vec![smf(50_000.0)],
        reflectors: vec![
            reflector(ReflectorKind::Connector, 1_000.0),
            reflector(ReflectorKind::Connector, 49_000.0),
        ],
    };
    let mut c = base("dispersion-50km", link, pulse(550e-6, 1.2e-3));
    c.acquisition.fidelity = Fidelity::Analytic;
    c.dispersion = Some(DispersionSpec::default());
    Ok(c)
}

pub fn preset(name: &str) -> Result<ExperimentConfig> {
    match name {
        "exp-100m" => exp_100m(),
        "exp-50km" => exp_50km(),
        "dispersion-50km" => dispersion_50km(),
        other => Err(OtdrError::Config(format!(
            "unknown preset {other:?} (available: {})",
            PRESETS
                .iter()
                .map(|p| p.name)
                .collect::<Vec<_>>()
                .join(", ")
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for p in PRESETS {
            let c = preset(p.name).unwrap();
            let e = c.build().unwrap();
            assert!(e.config.acquisition.periods >= 1, "{}", p.name);
        }
        assert_eq!(preset("nope").unwrap_err().exit_code(), 2);
    }

    #[test]
    fn long_preset_matches_the_tdc_limits() {
        let e = exp_50km().unwrap().build().unwrap();
        assert!((e.plan.config.bin_width - 73.3e-9).abs() < 1e-15);
        assert_eq!(e.plan.config.bin_count, 16_372);
        let rt = e.link.round_trip_time();
        assert!((rt - 500e-6).abs() < 1e-7);
        assert!((rt / e.plan.config.bin_width - LONG_ROUND_TRIP_BINS).abs() < 1e-6);
    }

    #[test]
    fn short_preset_bins() {
        let e = exp_100m().unwrap().build().unwrap();
        assert_eq!(e.plan.config.bin_count, 15_000);
        assert_eq!(e.link.reflectors().len(), 5);
    }
}
