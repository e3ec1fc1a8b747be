//! Trigger-referenced detection histograms and their three fidelity modes.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{OtdrError, Result};
use crate::fiber_link::FiberLink;
use crate::photon_detector::{
    optical_gain, simulate_events_with, substream, AttenuatorSetting, DetectionEvents,
    DetectorModel,
};
use crate::probe_pulse::ProbePulse;
use crate::response::{Component, ForwardModel};

/// Histogram bins available on the reference TDC.
pub const DEFAULT_BIN_CAP: usize = 16_384;
/// Bin-width step of the reference TDC.
pub const DEVICE_GRANULARITY: f64 = 0.1e-9;
/// Largest expected count per bin that still samples to an exact integer.
pub const MAX_EXACT_COUNT: f64 = 4_503_599_627_370_496.0;

const FORMAT_TAG: &str = "ibotdr-histogram-v1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramConfig {
    pub bin_width: f64,
    pub bin_count: usize,
    /// Delay from the trigger to the start of bin 0.
    #[serde(default)]
    pub trigger_delay: f64,
}

impl HistogramConfig {
    pub fn new(bin_width: f64, bin_count: usize, trigger_delay: f64) -> Result<Self> {
        let c = Self {
            bin_width,
            bin_count,
            trigger_delay,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bin_width > 0.0 && self.bin_width.is_finite()) {
            return Err(OtdrError::InvalidArgument(format!(
                "bin width must be > 0, got {}",
                self.bin_width
            )));
        }
        if self.bin_count == 0 {
            return Err(OtdrError::InvalidArgument("bin count must be ≥ 1".into()));
        }
        if !self.trigger_delay.is_finite() {
            return Err(OtdrError::InvalidArgument(
                "trigger delay must be finite".into(),
            ));
        }
        Ok(())
    }

    pub fn bin_start(&self, m: usize) -> f64 {
        self.trigger_delay + m as f64 * self.bin_width
    }

    pub fn bin_center(&self, m: usize) -> f64 {
        self.trigger_delay + (m as f64 + 0.5) * self.bin_width
    }

    pub fn span(&self) -> f64 {
        self.bin_width * self.bin_count as f64
    }

    /// Bin holding trigger-referenced time `t`, half-open `[mΔt, (m+1)Δt)`.
    pub fn locate(&self, t: f64) -> Option<usize> {
        let x = (t - self.trigger_delay) / self.bin_width;
        if x >= 0.0 && x < self.bin_count as f64 {
            Some(x.floor() as usize)
        } else {
            None
        }
    }
}

/// Bin constraints of a time-to-digital converter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TdcDevice {
    pub bin_cap: usize,
    pub granularity: f64,
    pub max_bin_width: Option<f64>,
}

impl Default for TdcDevice {
    fn default() -> Self {
        Self {
            bin_cap: DEFAULT_BIN_CAP,
            granularity: DEVICE_GRANULARITY,
            max_bin_width: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinPlan {
    pub config: HistogramConfig,
    /// Time the planned bins cover.
    pub coverage: f64,
    /// Time that had to be covered.
    pub required: f64,
}

/// Bins that cover one full probe period with a device of `device_cap` bins.
pub fn plan_bins(
    link: &FiberLink,
    pulse: &ProbePulse,
    requested_bin_width: f64,
    device_cap: usize,
) -> Result<BinPlan> {
    pulse.validate_against_link(link).into_result()?;
    let device = TdcDevice {
        bin_cap: device_cap,
        ..TdcDevice::default()
    };
    plan_span(&device, pulse.period, requested_bin_width)
}

/// Smallest bin width, at least `requested`, whose bins cover `span`. A
/// widened bin is rounded up to the device granularity.
pub fn plan_span(device: &TdcDevice, span: f64, requested: f64) -> Result<BinPlan> {
    if !(requested > 0.0 && requested.is_finite()) {
        return Err(OtdrError::InvalidArgument(format!(
            "requested bin width must be > 0, got {requested}"
        )));
    }
    if !(span > 0.0 && span.is_finite()) {
        return Err(OtdrError::InvalidArgument(format!(
            "span must be > 0, got {span}"
        )));
    }
    if device.bin_cap == 0 {
        return Err(OtdrError::Coverage("device has no bins".into()));
    }
    let cap = device.bin_cap as f64;
    let width = if requested * cap >= span {
        requested
    } else {
        let minimum = span / cap;
        let g = device.granularity;
        if g > 0.0 {
            (minimum / g - 1e-9).ceil() * g
        } else {
            minimum
        }
    };
    if let Some(max) = device.max_bin_width {
        if width > max {
            return Err(OtdrError::Coverage(format!(
                "covering {span} s with {} bins needs {width} s bins, above the device maximum {max} s",
                device.bin_cap
            )));
        }
    }
    let bins = ((span / width - 1e-9).ceil() as usize).clamp(1, device.bin_cap);
    Ok(BinPlan {
        config: HistogramConfig::new(width, bins, 0.0)?,
        coverage: width * bins as f64,
        required: span,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Fidelity {
    /// Noiseless expected counts.
    Analytic,
    /// Independent Poisson counts per bin; no dead-time correlation.
    #[default]
    Poisson,
    /// Photon-level Monte Carlo with dead time and jitter.
    Events,
}

impl fmt::Display for Fidelity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Fidelity::Analytic => "analytic",
            Fidelity::Poisson => "poisson",
            Fidelity::Events => "events",
        })
    }
}

impl FromStr for Fidelity {
    type Err = OtdrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "analytic" => Ok(Fidelity::Analytic),
            "poisson" => Ok(Fidelity::Poisson),
            "events" => Ok(Fidelity::Events),
            other => Err(OtdrError::Config(format!(
                "unknown fidelity {other:?} (expected analytic, poisson or events)"
            ))),
        }
    }
}

/// Pulse timing carried with a histogram so it can be processed on its own.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseTiming {
    pub width: f64,
    pub period: f64,
    pub rise_edge: f64,
    pub fall_edge: f64,
    /// Trigger-to-pulse offset.
    pub pulse_delay: f64,
    pub round_trip: f64,
    pub group_velocity: f64,
}

impl PulseTiming {
    pub fn new(pulse: &ProbePulse, link: &FiberLink) -> Self {
        Self {
            width: pulse.width,
            period: pulse.period,
            rise_edge: pulse.rise_edge,
            fall_edge: pulse.fall_edge,
            pulse_delay: pulse.trigger_delay,
            round_trip: link.round_trip_time(),
            group_velocity: link.mean_group_velocity(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct HistogramMeta {
    pub seed: Option<u64>,
    pub fidelity: Option<Fidelity>,
    pub timing: Option<PulseTiming>,
    /// Free-form provenance, e.g. assumed parameter values.
    pub notes: BTreeMap<String, String>,
}

/// Accumulated counts `C[m]`.
///
/// Counts are stored as `f64` so analytic (expected) histograms share the
/// type; sampled counts are integers and exact below 2^53.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub config: HistogramConfig,
    pub counts: Vec<f64>,
    pub periods: u64,
    /// Events that fell outside the binned range.
    pub dropped: u64,
    pub meta: HistogramMeta,
}

impl Histogram {
    pub fn empty(config: HistogramConfig) -> Self {
        Self {
            config,
            counts: vec![0.0; config.bin_count],
            periods: 0,
            dropped: 0,
            meta: HistogramMeta::default(),
        }
    }

    pub fn from_counts(config: HistogramConfig, counts: Vec<f64>, periods: u64) -> Result<Self> {
        config.validate()?;
        if counts.len() != config.bin_count {
            return Err(OtdrError::ConfigMismatch(format!(
                "{} counts for {} bins",
                counts.len(),
                config.bin_count
            )));
        }
        if let Some(c) = counts.iter().find(|c| !(**c >= 0.0 && c.is_finite())) {
            return Err(OtdrError::InvalidArgument(format!("count {c} is not ≥ 0")));
        }
        Ok(Self {
            config,
            counts,
            periods,
            dropped: 0,
            meta: HistogramMeta::default(),
        })
    }

    /// Adds one period's detections.
    pub fn add_period(&mut self, events: &DetectionEvents) {
        for &t in &events.timestamps {
            match self.config.locate(t) {
                Some(m) => self.counts[m] += 1.0,
                None => self.dropped += 1,
            }
        }
        self.periods += 1;
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    /// Sum of two histograms of the same configuration.
    pub fn merge(&self, other: &Histogram) -> Result<Histogram> {
        if self.config != other.config {
            return Err(OtdrError::ConfigMismatch(format!(
                "cannot merge {:?} with {:?}",
                self.config, other.config
            )));
        }
        Ok(Histogram {
            config: self.config,
            counts: self
                .counts
                .iter()
                .zip(&other.counts)
                .map(|(a, b)| a + b)
                .collect(),
            periods: self.periods + other.periods,
            dropped: self.dropped + other.dropped,
            meta: self.meta.clone(),
        })
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let c = &self.config;
        writeln!(w, "#format={FORMAT_TAG}")?;
        writeln!(w, "#bin_width={}", c.bin_width)?;
        writeln!(w, "#bin_count={}", c.bin_count)?;
        writeln!(w, "#trigger_delay={}", c.trigger_delay)?;
        writeln!(w, "#periods={}", self.periods)?;
        writeln!(w, "#dropped={}", self.dropped)?;
        if let Some(s) = self.meta.seed {
            writeln!(w, "#seed={s}")?;
        }
        if let Some(f) = self.meta.fidelity {
            writeln!(w, "#fidelity={f}")?;
        }
        if let Some(t) = &self.meta.timing {
            writeln!(w, "#pulse_width={}", t.width)?;
            writeln!(w, "#pulse_period={}", t.period)?;
            writeln!(w, "#rise_edge={}", t.rise_edge)?;
            writeln!(w, "#fall_edge={}", t.fall_edge)?;
            writeln!(w, "#pulse_delay={}", t.pulse_delay)?;
            writeln!(w, "#round_trip={}", t.round_trip)?;
            writeln!(w, "#group_velocity={}", t.group_velocity)?;
        }
        for (k, v) in &self.meta.notes {
            writeln!(w, "#note.{}={}", one_line(k), one_line(v))?;
        }
        writeln!(w, "bin_index,time_s,counts")?;
        for (m, v) in self.counts.iter().enumerate() {
            writeln!(w, "{m},{},{v}", c.bin_start(m))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Histogram> {
        let mut meta: BTreeMap<String, (usize, String)> = BTreeMap::new();
        let mut notes = BTreeMap::new();
        let mut counts = Vec::new();
        let mut header_seen = false;
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let n = i + 1;
            if let Some(kv) = line.strip_prefix('#') {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| parse_err(n, "metadata line without '='"))?;
                match k.strip_prefix("note.") {
                    Some(note) => {
                        notes.insert(note.to_string(), v.to_string());
                    }
                    None => {
                        meta.insert(k.to_string(), (n, v.to_string()));
                    }
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            if !header_seen {
                if line.trim() != "bin_index,time_s,counts" {
                    return Err(parse_err(n, "expected header bin_index,time_s,counts"));
                }
                header_seen = true;
                continue;
            }
            let mut fields = line.split(',');
            let (Some(idx), Some(time), Some(v), None) =
                (fields.next(), fields.next(), fields.next(), fields.next())
            else {
                return Err(parse_err(n, "expected three fields"));
            };
            let idx: usize = idx
                .trim()
                .parse()
                .map_err(|_| parse_err(n, "bad bin index"))?;
            if idx != counts.len() {
                return Err(parse_err(n, "bin indices must run 0, 1, 2, ..."));
            }
            time.trim()
                .parse::<f64>()
                .map_err(|_| parse_err(n, "bad time"))?;
            let v: f64 = v.trim().parse().map_err(|_| parse_err(n, "bad count"))?;
            if !(v >= 0.0 && v.is_finite()) {
                return Err(parse_err(n, "counts must be finite and ≥ 0"));
            }
            counts.push(v);
        }
        if !header_seen {
            return Err(parse_err(0, "no header line"));
        }
        let get = |k: &str| meta.get(k);
        let num = |k: &str| -> Result<Option<f64>> {
            get(k)
                .map(|(n, v)| {
                    v.parse::<f64>()
                        .map_err(|_| parse_err(*n, &format!("bad {k}")))
                })
                .transpose()
        };
        let int = |k: &str| -> Result<Option<u64>> {
            get(k)
                .map(|(n, v)| {
                    v.parse::<u64>()
                        .map_err(|_| parse_err(*n, &format!("bad {k}")))
                })
                .transpose()
        };
        let need =
            |k: &str, v: Option<f64>| v.ok_or_else(|| parse_err(0, &format!("missing #{k}")));
        if let Some((n, f)) = get("format") {
            if f != FORMAT_TAG {
                return Err(parse_err(*n, &format!("unsupported format {f}")));
            }
        }
        let bin_width = need("bin_width", num("bin_width")?)?;
        let bin_count = int("bin_count")?.unwrap_or(counts.len() as u64) as usize;
        if bin_count != counts.len() {
            return Err(parse_err(
                0,
                &format!("#bin_count={bin_count} but {} rows", counts.len()),
            ));
        }
        let config =
            HistogramConfig::new(bin_width, bin_count, num("trigger_delay")?.unwrap_or(0.0))
                .map_err(|e| parse_err(0, &e.to_string()))?;
        let timing = if get("pulse_width").is_some() {
            Some(PulseTiming {
                width: need("pulse_width", num("pulse_width")?)?,
                period: need("pulse_period", num("pulse_period")?)?,
                rise_edge: need("rise_edge", num("rise_edge")?)?,
                fall_edge: need("fall_edge", num("fall_edge")?)?,
                pulse_delay: need("pulse_delay", num("pulse_delay")?)?,
                round_trip: need("round_trip", num("round_trip")?)?,
                group_velocity: need("group_velocity", num("group_velocity")?)?,
            })
        } else {
            None
        };
        let fidelity = get("fidelity")
            .map(|(n, v)| {
                v.parse::<Fidelity>()
                    .map_err(|_| parse_err(*n, "bad fidelity"))
            })
            .transpose()?;
        Ok(Histogram {
            config,
            counts,
            periods: int("periods")?.unwrap_or(0),
            dropped: int("dropped")?.unwrap_or(0),
            meta: HistogramMeta {
                seed: int("seed")?,
                fidelity,
                timing,
                notes,
            },
        })
    }
}

fn one_line(s: &str) -> String {
    s.replace(['\n', '\r'], " ")
}

fn parse_err(line: usize, message: &str) -> OtdrError {
    OtdrError::Parse {
        line,
        message: message.to_string(),
    }
}

/// Histograms a stream of per-period detections.
pub fn accumulate<'a, I>(events: I, config: HistogramConfig) -> Histogram
where
    I: IntoIterator<Item = &'a DetectionEvents>,
{
    let mut h = Histogram::empty(config);
    for e in events {
        h.add_period(e);
    }
    h
}

/// Expected counts per bin, split by origin.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedHistogram {
    pub config: HistogramConfig,
    pub periods: u64,
    pub rayleigh: Vec<f64>,
    pub fresnel: Vec<f64>,
    pub dark: Vec<f64>,
}

impl ExpectedHistogram {
    pub fn total(&self) -> Vec<f64> {
        (0..self.config.bin_count)
            .map(|m| self.rayleigh[m] + self.fresnel[m] + self.dark[m])
            .collect()
    }

    /// Applies per-bin multiplicative gains to the Rayleigh component.
    pub fn with_rayleigh_gains(mut self, gains: &[f64]) -> Result<Self> {
        if gains.len() != self.rayleigh.len() {
            return Err(OtdrError::ConfigMismatch(format!(
                "{} gains for {} bins",
                gains.len(),
                self.rayleigh.len()
            )));
        }
        for (r, g) in self.rayleigh.iter_mut().zip(gains) {
            *r *= g;
        }
        Ok(self)
    }

    pub fn into_histogram(self) -> Histogram {
        let counts = self.total();
        Histogram {
            config: self.config,
            counts,
            periods: self.periods,
            dropped: 0,
            meta: HistogramMeta {
                fidelity: Some(Fidelity::Analytic),
                ..HistogramMeta::default()
            },
        }
    }
}

/// Grid step giving four Rayleigh cells per bin of round-trip time.
pub fn default_grid_step(bin_width: f64, group_velocity: f64) -> f64 {
    0.25 * bin_width * group_velocity / 2.0
}

/// Forward model on the default grid for the given bins.
pub fn model_for(
    link: &FiberLink,
    pulse: &ProbePulse,
    config: &HistogramConfig,
) -> Result<ForwardModel> {
    let dz = default_grid_step(config.bin_width, link.mean_group_velocity())
        .min(link.shortest_segment());
    ForwardModel::new(link, pulse, dz)
}

/// Noiseless counts, `periods · ∫_bin photon_rate(P(t)) dt`, ignoring dead
/// time.
pub fn expected_histogram(
    link: &FiberLink,
    pulse: &ProbePulse,
    detector: &DetectorModel,
    voa: &AttenuatorSetting,
    config: &HistogramConfig,
    periods: u64,
) -> Result<ExpectedHistogram> {
    pulse.validate_against_link(link).into_result()?;
    detector.validate()?;
    config.validate()?;
    let model = model_for(link, pulse, config)?;
    Ok(expected_from_model(
        &model,
        optical_gain(pulse.wavelength_nm, detector, voa),
        detector.dark_rate,
        config,
        periods,
        pulse.period,
    ))
}

/// Expected counts for a model given detections per joule and a dark rate.
/// Only time within one period after the trigger is observed.
pub fn expected_from_model(
    model: &ForwardModel,
    detections_per_joule: f64,
    dark_rate: f64,
    config: &HistogramConfig,
    periods: u64,
    period: f64,
) -> ExpectedHistogram {
    let n = periods as f64;
    let rows: Vec<(f64, f64, f64)> = (0..config.bin_count)
        .into_par_iter()
        .map(|m| {
            let a = config.bin_start(m);
            let (lo, hi) = if a >= 0.0 && a + config.bin_width <= period {
                (a, config.bin_width)
            } else {
                let lo = a.max(0.0);
                (lo, ((a + config.bin_width).min(period) - lo).max(0.0))
            };
            if hi <= 0.0 {
                return (0.0, 0.0, 0.0);
            }
            let g = n * detections_per_joule;
            (
                g * model.bin_energy(lo, hi, Component::Rayleigh),
                g * model.bin_energy(lo, hi, Component::Fresnel),
                n * dark_rate * hi,
            )
        })
        .collect();
    let mut e = ExpectedHistogram {
        config: *config,
        periods,
        rayleigh: Vec::with_capacity(rows.len()),
        fresnel: Vec::with_capacity(rows.len()),
        dark: Vec::with_capacity(rows.len()),
    };
    for (r, f, d) in rows {
        e.rayleigh.push(r);
        e.fresnel.push(f);
        e.dark.push(d);
    }
    e
}

/// Independent Poisson draw per bin, each bin on its own substream of
/// `seed`. Dead-time correlations are not modeled here.
pub fn sample_histogram(expected: &[f64], seed: u64) -> Result<Vec<f64>> {
    if let Some(bad) = expected
        .iter()
        .find(|e| !(**e >= 0.0 && **e <= MAX_EXACT_COUNT))
    {
        return Err(OtdrError::InvalidArgument(format!(
            "expected count {bad} is negative or beyond exact integer range"
        )));
    }
    Ok(expected
        .par_iter()
        .enumerate()
        .map(|(m, &lambda)| {
            if lambda == 0.0 {
                0.0
            } else {
                Poisson::new(lambda)
                    .expect("validated rate")
                    .sample(&mut substream(seed, m as u64))
            }
        })
        .collect())
}

/// Photon-level Monte Carlo histogram of `periods` probe periods.
pub fn simulate_histogram(
    model: &ForwardModel,
    detections_per_joule: f64,
    detector: &DetectorModel,
    config: &HistogramConfig,
    periods: u64,
    period: f64,
    seed: u64,
) -> Result<Histogram> {
    let dark = detector.dark_rate;
    let bound = detections_per_joule * model.power_bound() + dark;
    let mut h = Histogram::empty(*config);
    simulate_events_with(
        |t| detections_per_joule * model.power(t) + dark,
        bound,
        period,
        detector,
        periods,
        seed,
        |e| h.add_period(&e),
    )?;
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fiber_link::{FiberSegment, Reflector};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn short_link() -> FiberLink {
        FiberLink::new(
            vec![
                FiberSegment::smf(54.0),
                FiberSegment::smf(20.0),
                FiberSegment::smf(22.0),
            ],
            vec![Reflector::connector(54.0), Reflector::open_end(96.0)],
        )
        .unwrap()
    }

    fn short_pulse() -> ProbePulse {
        ProbePulse {
            width: 1.5e-6,
            period: 3e-6,
            rise_edge: 2.5e-9,
            fall_edge: 2.5e-9,
            peak_power: 1e-3,
            wavelength_nm: 1539.77,
            linewidth_nm: 1e-4,
            trigger_delay: 0.0,
        }
    }

    #[test]
    fn planning_examples() {
        let long = FiberLink::new(vec![FiberSegment::smf(50_000.0)], vec![]).unwrap();
        let p = ProbePulse {
            width: 550e-6,
            period: 1.2e-3,
            ..short_pulse()
        };
        let plan = plan_bins(&long, &p, 0.1e-9, 16_384).unwrap();
        assert!(plan.config.bin_width >= 1.2e-3 / 16_384.0);
        assert_relative_eq!(1.2e-3 / 16_384.0, 73.24e-9, max_relative = 1e-4);
        assert_relative_eq!(plan.config.bin_width, 73.3e-9, max_relative = 1e-12);
        assert!(plan.coverage >= 1.2e-3);
        assert!(plan.config.bin_count <= 16_384);

        let plan = plan_bins(&short_link(), &short_pulse(), 200e-12, 16_384).unwrap();
        assert_eq!(plan.config.bin_width, 200e-12);
        assert_eq!(plan.config.bin_count, 15_000);

        // idempotent on an already covering width
        let again = plan_span(&TdcDevice::default(), 3e-6, plan.config.bin_width).unwrap();
        assert_eq!(again.config, plan.config);

        let small = TdcDevice {
            max_bin_width: Some(50e-9),
            ..TdcDevice::default()
        };
        assert!(matches!(
            plan_span(&small, 1.2e-3, 1e-9),
            Err(OtdrError::Coverage(_))
        ));
        assert!(plan_span(&TdcDevice::default(), 1e-3, 0.0).is_err());
    }

    #[test]
    fn half_open_bins() {
        let c = HistogramConfig::new(1e-9, 10, 0.0).unwrap();
        let h = accumulate(&[], c);
        assert!(h.counts.iter().all(|&x| x == 0.0));
        let ev = DetectionEvents {
            period_index: 0,
            timestamps: vec![3e-9, 9.999e-9, 10e-9, -1e-12],
        };
        let h = accumulate([&ev], c);
        assert_eq!(h.counts[3], 1.0);
        assert_eq!(h.counts[9], 1.0);
        assert_eq!(h.dropped, 2);
        assert_eq!(h.total() + h.dropped as f64, 4.0);
        assert_eq!(h.periods, 1);
    }

    fn random_events(seed: u64, periods: u64) -> Vec<DetectionEvents> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..periods)
            .map(|k| {
                let n = rng.random_range(0..6);
                let mut ts: Vec<f64> = (0..n).map(|_| rng.random_range(-1e-9..11e-9)).collect();
                ts.sort_by(f64::total_cmp);
                DetectionEvents {
                    period_index: k,
                    timestamps: ts,
                }
            })
            .collect()
    }

    #[test]
    fn split_then_merge_equals_joint() {
        let c = HistogramConfig::new(1e-9, 10, 0.0).unwrap();
        for seed in 0..50 {
            let ev = random_events(seed, 40);
            let joint = accumulate(&ev, c);
            for cut in 0..=ev.len() {
                let merged = accumulate(&ev[..cut], c)
                    .merge(&accumulate(&ev[cut..], c))
                    .unwrap();
                assert_eq!(merged, joint);
            }
        }
        let other = Histogram::empty(HistogramConfig::new(2e-9, 10, 0.0).unwrap());
        assert!(matches!(
            Histogram::empty(c).merge(&other),
            Err(OtdrError::ConfigMismatch(_))
        ));
    }

    proptest! {
        #[test]
        fn merge_commutes_and_associates(a in any::<u64>(), b in any::<u64>(), d in any::<u64>()) {
            let c = HistogramConfig::new(1e-9, 10, 0.0).unwrap();
            let (x, y, z) = (
                accumulate(&random_events(a, 7), c),
                accumulate(&random_events(b, 5), c),
                accumulate(&random_events(d, 9), c),
            );
            prop_assert_eq!(x.merge(&y).unwrap(), y.merge(&x).unwrap());
            prop_assert_eq!(
                x.merge(&y).unwrap().merge(&z).unwrap(),
                x.merge(&y.merge(&z).unwrap()).unwrap()
            );
        }
    }

    #[test]
    fn expected_dark_floor_and_linearity() {
        let link = short_link();
        let p = short_pulse();
        let c = HistogramConfig::new(200e-12, 15_000, 0.0).unwrap();
        let model = model_for(&link, &p, &c).unwrap();
        // no optical signal reaching the detector
        let e = expected_from_model(&model, 0.0, 100.0, &c, 1000, p.period);
        assert!(e
            .total()
            .iter()
            .all(|&x| (x - 1000.0 * 100.0 * 200e-12).abs() < 1e-18));
        let d = DetectorModel::snspd();
        let voa = AttenuatorSetting::new(30.0).unwrap();
        let one = expected_histogram(&link, &p, &d, &voa, &c, 1000)
            .unwrap()
            .total();
        let two = expected_histogram(&link, &p, &d, &voa, &c, 2000)
            .unwrap()
            .total();
        assert!(one.iter().zip(&two).all(|(a, b)| *b == 2.0 * a));
    }

    #[test]
    fn plateau_bins_are_equal() {
        let link = short_link();
        let p = short_pulse();
        let c = HistogramConfig::new(200e-12, 15_000, 0.0).unwrap();
        let e = expected_histogram(
            &link,
            &p,
            &DetectorModel::snspd(),
            &AttenuatorSetting::default(),
            &c,
            1,
        )
        .unwrap()
        .total();
        // fully lit after the far-end echo has risen, until the pulse falls
        let first = ((link.round_trip_time() + p.rise_edge) / 200e-12).ceil() as usize + 1;
        let last = ((p.width - p.fall_edge) / 200e-12).floor() as usize - 1;
        let level = e[first];
        assert!(level > 0.0);
        for v in &e[first..last] {
            assert!((v - level).abs() <= 1e-6 * level);
        }
    }

    #[test]
    fn poisson_sampling() {
        assert_eq!(sample_histogram(&[0.0; 5], 1).unwrap(), vec![0.0; 5]);
        let big = vec![1e4; 4000];
        let s = sample_histogram(&big, 11).unwrap();
        let outside = s.iter().filter(|&&x| (x - 1e4).abs() > 400.0).count();
        // P(|Z| > 4) ≈ 6.3e-5
        assert!(outside <= 2, "{outside}");
        let e = vec![3.5, 40.0, 900.0];
        let mut sums = [0.0; 3];
        for seed in 0..1000 {
            for (acc, v) in sums.iter_mut().zip(sample_histogram(&e, seed).unwrap()) {
                *acc += v;
            }
        }
        for (s, e) in sums.iter().zip(&e) {
            assert!((s / 1000.0 / e - 1.0).abs() < 0.01 + 4.0 / (1000.0 * e).sqrt());
        }
        assert!(sample_histogram(&[-1.0], 1).is_err());
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let c = HistogramConfig::new(73.3e-9, 50, 1.7e-9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let counts: Vec<f64> = (0..50).map(|_| rng.random::<f64>() * 1e6).collect();
        let mut h = Histogram::from_counts(c, counts, 12345).unwrap();
        h.dropped = 7;
        h.meta.seed = Some(99);
        h.meta.fidelity = Some(Fidelity::Analytic);
        h.meta.timing = Some(PulseTiming::new(&short_pulse(), &short_link()));
        h.meta.notes.insert("voa_db".into(), "12.5".into());
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        let back = Histogram::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, h);
        let mut again = Vec::new();
        back.write_csv(&mut again).unwrap();
        assert_eq!(buf, again);
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("\nbin_index,time_s,counts\n"));
    }

    #[test]
    fn csv_rejects_garbage() {
        let bad = "#bin_width=1e-9\nbin_index,time_s,counts\n0,0,abc\n";
        assert!(matches!(
            Histogram::read_csv(bad.as_bytes()),
            Err(OtdrError::Parse { line: 3, .. })
        ));
        assert!(Histogram::read_csv("no header\n".as_bytes()).is_err());
    }
}
