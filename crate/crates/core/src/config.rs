//! Experiment configuration: a versioned TOML document describing the link,
//! probe, detector, histogram, acquisition, processing and analysis.
//!
//! Every table except `[link]` and `[pulse]` may be omitted; segment and
//! detector fields default to standard single-mode fiber and the SNSPD
//! numbers.
//!
//! ```toml
//! schema_version = 1
//!
//! [link]
//! segments = [{ length_m = 1000.0 }]
//! reflectors = [{ kind = "open_end", position_m = 1000.0 }]
//!
//! [pulse]
//! width = 20e-6
//! period = 40e-6
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{OtdrError, Result};
use crate::fiber_link::{
    FiberLink, FiberSegment, Reflector, ReflectorKind, CONNECTOR_INSERTION_LOSS_DB,
    CONNECTOR_REFLECTANCE, SILICA_INDEX, SMF_ATTENUATION_DB_PER_KM, SMF_CAPTURE_FRACTION,
    SMF_DISPERSION, SMF_GROUP_VELOCITY, SMF_SCATTER_LOSS_DB_PER_KM, SPLICE_INSERTION_LOSS_DB,
    SPLICE_REFLECTANCE,
};
use crate::photon_detector::{DeadTimeKind, DetectorModel};
use crate::probe_pulse::ProbePulse;
use crate::tdc_histogram::{
    plan_span, BinPlan, Fidelity, TdcDevice, DEFAULT_BIN_CAP, DEVICE_GRANULARITY,
};
use crate::trace_analysis::AnalysisOptions;
use crate::trace_processing::{DbConvention, DbScale, Direction};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub link: LinkSpec,
    pub pulse: PulseSpec,
    #[serde(default)]
    pub detector: DetectorSpec,
    #[serde(default)]
    pub histogram: HistogramSpec,
    #[serde(default)]
    pub acquisition: AcquisitionSpec,
    #[serde(default)]
    pub processing: ProcessingSpec,
    #[serde(default)]
    pub analysis: AnalysisOptions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dispersion: Option<DispersionSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub segments: Vec<SegmentSpec>,
    #[serde(default)]
    pub reflectors: Vec<ReflectorSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmentSpec {
    pub length_m: f64,
    pub attenuation_db_per_km: f64,
    pub scatter_loss_db_per_km: f64,
    pub capture_fraction: f64,
    pub group_velocity: f64,
    pub dispersion_ps_per_nm_km: f64,
}

impl Default for SegmentSpec {
    fn default() -> Self {
        Self {
            length_m: 0.0,
            attenuation_db_per_km: SMF_ATTENUATION_DB_PER_KM,
            scatter_loss_db_per_km: SMF_SCATTER_LOSS_DB_PER_KM,
            capture_fraction: SMF_CAPTURE_FRACTION,
            group_velocity: SMF_GROUP_VELOCITY,
            dispersion_ps_per_nm_km: SMF_DISPERSION,
        }
    }
}

impl From<SegmentSpec> for FiberSegment {
    fn from(s: SegmentSpec) -> Self {
        FiberSegment {
            length_m: s.length_m,
            attenuation_db_per_km: s.attenuation_db_per_km,
            scatter_loss_db_per_km: s.scatter_loss_db_per_km,
            capture_fraction: s.capture_fraction,
            group_velocity: s.group_velocity,
            dispersion_ps_per_nm_km: s.dispersion_ps_per_nm_km,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReflectorSpec {
    pub kind: ReflectorKind,
    pub position_m: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reflectance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub insertion_loss_db: Option<f64>,
}

impl From<ReflectorSpec> for Reflector {
    fn from(r: ReflectorSpec) -> Self {
        let (refl, loss) = match r.kind {
            ReflectorKind::Connector => (CONNECTOR_REFLECTANCE, CONNECTOR_INSERTION_LOSS_DB),
            ReflectorKind::Splice => (SPLICE_REFLECTANCE, SPLICE_INSERTION_LOSS_DB),
            ReflectorKind::OpenEnd => (crate::fiber_link::fresnel_reflectance(SILICA_INDEX), 0.0),
        };
        Reflector {
            position_m: r.position_m,
            reflectance: r.reflectance.unwrap_or(refl),
            kind: r.kind,
            insertion_loss_db: r.insertion_loss_db.unwrap_or(loss),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseSpec {
    pub width: f64,
    pub period: f64,
    #[serde(default = "default_edge")]
    pub rise_edge: f64,
    #[serde(default = "default_edge")]
    pub fall_edge: f64,
    #[serde(default = "default_peak_power")]
    pub peak_power: f64,
    #[serde(default = "default_wavelength")]
    pub wavelength_nm: f64,
    #[serde(default = "default_linewidth")]
    pub linewidth_nm: f64,
    #[serde(default)]
    pub trigger_delay: f64,
}

fn default_edge() -> f64 {
    2.5e-9
}
fn default_peak_power() -> f64 {
    1e-3
}
fn default_wavelength() -> f64 {
    1539.77
}
fn default_linewidth() -> f64 {
    1e-4
}

impl From<PulseSpec> for ProbePulse {
    fn from(p: PulseSpec) -> Self {
        ProbePulse {
            width: p.width,
            period: p.period,
            rise_edge: p.rise_edge,
            fall_edge: p.fall_edge,
            peak_power: p.peak_power,
            wavelength_nm: p.wavelength_nm,
            linewidth_nm: p.linewidth_nm,
            trigger_delay: p.trigger_delay,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorSpec {
    pub efficiency: f64,
    pub dark_rate: f64,
    pub dead_time: f64,
    pub dead_time_kind: DeadTimeKind,
    pub timing_jitter_sigma: f64,
    /// Fixed attenuator setting; chosen from `linearity_target` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub voa_db: Option<f64>,
    /// Allowed dead-time loss fraction at the plateau rate.
    pub linearity_target: f64,
}

impl Default for DetectorSpec {
    fn default() -> Self {
        let d = DetectorModel::snspd();
        Self {
            efficiency: d.efficiency,
            dark_rate: d.dark_rate,
            dead_time: d.dead_time,
            dead_time_kind: d.dead_time_kind,
            timing_jitter_sigma: d.timing_jitter_sigma,
            voa_db: None,
            linearity_target: 0.01,
        }
    }
}

impl DetectorSpec {
    pub fn model(&self) -> DetectorModel {
        DetectorModel {
            efficiency: self.efficiency,
            dark_rate: self.dark_rate,
            dead_time: self.dead_time,
            dead_time_kind: self.dead_time_kind,
            timing_jitter_sigma: self.timing_jitter_sigma,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HistogramSpec {
    /// Requested bin width; widened if the device cannot cover a period.
    pub bin_width: f64,
    pub bin_cap: usize,
    pub granularity: f64,
}

impl Default for HistogramSpec {
    fn default() -> Self {
        Self {
            bin_width: DEVICE_GRANULARITY,
            bin_cap: DEFAULT_BIN_CAP,
            granularity: DEVICE_GRANULARITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AcquisitionSpec {
    pub periods: u64,
    pub seed: u64,
    pub fidelity: Fidelity,
    /// Relative standard deviation of multiplicative Rayleigh fading.
    pub fading_sigma: f64,
}

impl Default for AcquisitionSpec {
    fn default() -> Self {
        Self {
            periods: 1_000_000,
            seed: 1,
            fidelity: Fidelity::Poisson,
            fading_sigma: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProcessingSpec {
    pub lags: Vec<usize>,
    pub direction: Direction,
    pub convention: DbConvention,
    pub db_reference: f64,
    pub db_floor: f64,
}

impl Default for ProcessingSpec {
    fn default() -> Self {
        let s = DbScale::default();
        Self {
            lags: vec![1],
            direction: Direction::Falling,
            convention: s.convention,
            db_reference: s.reference,
            db_floor: s.floor,
        }
    }
}

impl ProcessingSpec {
    pub fn scale(&self) -> DbScale {
        DbScale {
            reference: self.db_reference,
            floor: self.db_floor,
            convention: self.convention,
        }
    }
}

/// Settings for the short-pulse versus long-pulse resolution comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DispersionSpec {
    /// Bin width of the acquisition windows around each reflector.
    pub bin_width: f64,
    pub lag: usize,
    /// Conventional probe FWHM; `2 · lag · bin_width` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub conventional_fwhm: Option<f64>,
    /// Extra time kept on each side of an echo, s.
    pub margin: f64,
}

impl Default for DispersionSpec {
    fn default() -> Self {
        Self {
            bin_width: 10e-12,
            lag: 1,
            conventional_fwhm: None,
            margin: 1e-9,
        }
    }
}

/// Config with its physics objects built and cross-checked.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub link: FiberLink,
    pub pulse: ProbePulse,
    pub detector: DetectorModel,
    pub plan: BinPlan,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| OtdrError::Config(e.message().trim().to_string()))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(OtdrError::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            OtdrError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| OtdrError::Config(e.to_string()))
    }

    pub fn link(&self) -> Result<FiberLink> {
        FiberLink::new(
            self.link.segments.iter().map(|&s| s.into()).collect(),
            self.link.reflectors.iter().map(|&r| r.into()).collect(),
        )
    }

    pub fn device(&self) -> TdcDevice {
        TdcDevice {
            bin_cap: self.histogram.bin_cap,
            granularity: self.histogram.granularity,
            max_bin_width: None,
        }
    }

    /// Builds and cross-validates every physics object.
    pub fn build(&self) -> Result<Experiment> {
        let link = self.link()?;
        let pulse: ProbePulse = self.pulse.into();
        pulse.validate()?;
        pulse.validate_against_link(&link).into_result()?;
        let detector = self.detector.model();
        detector.validate()?;
        if let Some(v) = self.detector.voa_db {
            crate::photon_detector::AttenuatorSetting::new(v)?;
        }
        if !(self.detector.linearity_target > 0.0 && self.detector.linearity_target < 1.0) {
            return Err(OtdrError::Config(
                "detector.linearity_target must lie in (0, 1)".into(),
            ));
        }
        if self.acquisition.periods == 0 {
            return Err(OtdrError::Config("acquisition.periods must be ≥ 1".into()));
        }
        if !(self.acquisition.fading_sigma >= 0.0) {
            return Err(OtdrError::Config(
                "acquisition.fading_sigma must be ≥ 0".into(),
            ));
        }
        if self.processing.lags.is_empty() || self.processing.lags.contains(&0) {
            return Err(OtdrError::Config(
                "processing.lags must be a nonempty list of positive integers".into(),
            ));
        }
        let plan = plan_span(&self.device(), pulse.period, self.histogram.bin_width)?;
        Ok(Experiment {
            config: self.clone(),
            link,
            pulse,
            detector,
            plan,
        })
    }

    pub fn analysis_options(&self) -> AnalysisOptions {
        self.analysis.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
schema_version = 1
[link]
segments = [{ length_m = 1000.0 }]
reflectors = [{ kind = "open_end", position_m = 1000.0 }]
[pulse]
width = 20e-6
period = 40e-6
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        let e = c.build().unwrap();
        assert_eq!(
            e.link.segments()[0].attenuation_db_per_km,
            SMF_ATTENUATION_DB_PER_KM
        );
        assert_eq!(e.detector, DetectorModel::snspd());
        assert_eq!(
            e.link.reflectors()[0].reflectance,
            crate::fiber_link::fresnel_reflectance(SILICA_INDEX)
        );
        assert_eq!(c.processing.lags, vec![1]);
        // 40 µs in 16384 bins needs 2.5 ns bins
        assert!((e.plan.config.bin_width - 2.5e-9).abs() < 1e-18);
    }

    #[test]
    fn round_trips_through_toml() {
        let c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        let again = ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn schema_and_physics_errors_are_distinguished() {
        let bad_version = MINIMAL.replace("schema_version = 1", "schema_version = 7");
        assert_eq!(
            ExperimentConfig::from_toml(&bad_version)
                .unwrap_err()
                .exit_code(),
            2
        );
        let unknown = MINIMAL.replace("period = 40e-6", "period = 40e-6\ncolour = 3");
        assert_eq!(
            ExperimentConfig::from_toml(&unknown)
                .unwrap_err()
                .exit_code(),
            2
        );
        assert_eq!(
            ExperimentConfig::from_toml("not toml [")
                .unwrap_err()
                .exit_code(),
            2
        );
        let short = MINIMAL
            .replace("width = 20e-6", "width = 5e-6")
            .replace("period = 40e-6", "period = 10e-6");
        let err = ExperimentConfig::from_toml(&short)
            .unwrap()
            .build()
            .unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("τ ≥ 2L/v_g"));
    }
}
