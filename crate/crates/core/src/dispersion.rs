//! Resolution along the fiber for a long-pulse (infinite backscatter) probe
//! against a conventional short Gaussian probe.
//!
//! Each reflector gets its own finely binned acquisition window, aligned to a
//! common bin grid so every echo is sampled with the same phase. The
//! long-pulse trace is the falling-edge differential of the cumulative
//! counts; the short-pulse trace is the dark-subtracted counts themselves.

use std::collections::BTreeMap;
use std::io::Write;

use rand::RngCore;

use crate::config::{DispersionSpec, Experiment};
use crate::error::{OtdrError, Result};
use crate::photon_detector::{optical_gain, substream, AttenuatorSetting};
use crate::pipeline::{attenuator, RunOverrides};
use crate::probe_pulse::transform_limited_linewidth;
use crate::response::ForwardModel;
use crate::tdc_histogram::{
    default_grid_step, expected_from_model, sample_histogram, Fidelity, Histogram, HistogramConfig,
};
use crate::trace_analysis::{
    detect_events_with, resolution_report, EventOptions, ReflectiveEvent, ResolutionReport,
};
use crate::trace_processing::{
    differential_trace, DbScale, Direction, OtdrTrace, PartSelection,
};

/// 1/e² full width of a Gaussian per unit FWHM.
pub const GAUSSIAN_E2_PER_FWHM: f64 = 1.698_643_600_576_038;

/// One probe type's windows, events and verdict.
#[derive(Debug, Clone)]
pub struct ModeResult {
    /// One trace per reflector window.
    pub traces: Vec<OtdrTrace>,
    /// Strongest event of each window.
    pub events: Vec<ReflectiveEvent>,
    pub report: ResolutionReport,
}

#[derive(Debug, Clone)]
pub struct DispersionComparison {
    pub reflectors: Vec<f64>,
    pub ib: ModeResult,
    pub conventional: ModeResult,
    pub ib_spectral_width_nm: f64,
    pub conventional_fwhm: f64,
    pub conventional_spectral_width_nm: f64,
    /// Expected 1/e² widths of the conventional echoes, m.
    pub predicted_widths: Vec<f64>,
}

impl DispersionComparison {
    /// Far minus near conventional width, measured and predicted, m.
    pub fn broadening(&self) -> (f64, f64) {
        let w = &self.conventional.report.widths;
        let measured = w.last().map_or(0.0, |l| l.1) - w.first().map_or(0.0, |f| f.1);
        let p = &self.predicted_widths;
        let predicted = p.last().copied().unwrap_or(0.0) - p.first().copied().unwrap_or(0.0);
        (measured, predicted)
    }

    pub fn summary(&self) -> String {
        let join = |v: &mut dyn Iterator<Item = f64>| {
            v.map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(";")
        };
        let (measured, predicted) = self.broadening();
        let mut s = String::new();
        let mut kv = |k: &str, v: String| s.push_str(&format!("{k}={v}\n"));
        kv("reflectors_m", join(&mut self.reflectors.iter().copied()));
        kv("ib_spectral_width_nm", format!("{:e}", self.ib_spectral_width_nm));
        kv("ib_widths_m", join(&mut self.ib.report.widths.iter().map(|w| w.1)));
        kv("ib_spread_m", format!("{:.6}", self.ib.report.spread));
        kv("ib_sample_spacing_m", format!("{:.6}", self.ib.report.sample_spacing));
        kv("ib_verdict", self.ib.report.verdict().into());
        kv("conventional_fwhm_s", format!("{:e}", self.conventional_fwhm));
        kv(
            "conventional_spectral_width_nm",
            format!("{:e}", self.conventional_spectral_width_nm),
        );
        kv(
            "conventional_widths_m",
            join(&mut self.conventional.report.widths.iter().map(|w| w.1)),
        );
        kv(
            "conventional_predicted_widths_m",
            join(&mut self.predicted_widths.iter().copied()),
        );
        kv("conventional_spread_m", format!("{:.6}", self.conventional.report.spread));
        kv(
            "conventional_sample_spacing_m",
            format!("{:.6}", self.conventional.report.sample_spacing),
        );
        kv("conventional_verdict", self.conventional.report.verdict().into());
        kv("broadening_measured_m", format!("{measured:.6}"));
        kv("broadening_predicted_m", format!("{predicted:.6}"));
        s
    }

    /// `mode,reflector_m,position_m,width_1e2_m,predicted_width_m` per event.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "mode,reflector_m,position_m,width_1e2_m,predicted_width_m")?;
        for (i, z) in self.reflectors.iter().enumerate() {
            let e = &self.ib.events[i];
            writeln!(w, "ib,{z},{},{},", e.position, e.width_1e2)?;
        }
        for (i, z) in self.reflectors.iter().enumerate() {
            let e = &self.conventional.events[i];
            writeln!(
                w,
                "conventional,{z},{},{},{}",
                e.position, e.width_1e2, self.predicted_widths[i]
            )?;
        }
        Ok(())
    }
}

/// Spectral width used for the long-pulse probe: its configured linewidth,
/// but never narrower than the transform limit of its sharpest edge.
pub fn ib_spectral_width(exp: &Experiment) -> Result<f64> {
    let p = &exp.pulse;
    let edge = p.rise_edge.min(p.fall_edge);
    let tl = if edge > 0.0 {
        transform_limited_linewidth(edge, p.wavelength_nm)?
    } else {
        0.0
    };
    Ok(p.linewidth_nm.max(tl))
}

/// Windowed acquisition covering `[t0, t1)` on the global grid of `dt`.
fn window(dt: f64, t0: f64, t1: f64) -> Result<HistogramConfig> {
    let m0 = (t0 / dt).floor();
    let m1 = (t1 / dt).ceil();
    HistogramConfig::new(dt, (m1 - m0) as usize, m0 * dt)
}

struct Acquire<'a> {
    exp: &'a Experiment,
    gain: f64,
    periods: u64,
    fidelity: Fidelity,
    seed: u64,
}

impl Acquire<'_> {
    fn counts(&self, model: &ForwardModel, config: &HistogramConfig, stream: u64) -> Result<Histogram> {
        let expected = expected_from_model(
            model,
            self.gain,
            self.exp.detector.dark_rate,
            config,
            self.periods,
            self.exp.pulse.period,
        )
        .total();
        let counts = match self.fidelity {
            Fidelity::Analytic => expected,
            Fidelity::Poisson => {
                sample_histogram(&expected, substream(self.seed, stream).next_u64())?
            }
            Fidelity::Events => unreachable!("rejected before acquisition"),
        };
        Histogram::from_counts(*config, counts, self.periods)
    }
}

fn strongest(trace: &OtdrTrace, opts: &EventOptions, z: f64) -> Result<ReflectiveEvent> {
    detect_events_with(trace, opts)
        .into_iter()
        .max_by(|a, b| a.peak_value.total_cmp(&b.peak_value))
        .ok_or_else(|| OtdrError::Analysis(format!("no echo found in the window of the reflector at {z} m")))
}

/// Runs both probe types over every reflector of the link.
pub fn compare_dispersion(exp: &Experiment, over: RunOverrides) -> Result<DispersionComparison> {
    let spec: DispersionSpec = exp.config.dispersion.unwrap_or_default();
    let fidelity = over.fidelity.unwrap_or(exp.config.acquisition.fidelity);
    if fidelity == Fidelity::Events {
        return Err(OtdrError::Config(
            "the dispersion comparison supports analytic and poisson fidelity only".into(),
        ));
    }
    if !(spec.bin_width > 0.0) || spec.lag == 0 || !(spec.margin >= 0.0) {
        return Err(OtdrError::Config(
            "dispersion: bin_width must be > 0, lag ≥ 1 and margin ≥ 0".into(),
        ));
    }
    let link = &exp.link;
    let pulse = &exp.pulse;
    let reflectors: Vec<f64> = link.reflectors().iter().map(|r| r.position_m).collect();
    if reflectors.len() < 2 {
        return Err(OtdrError::Analysis(format!(
            "resolution comparison needs at least 2 reflectors, found {}",
            reflectors.len()
        )));
    }
    let dt = spec.bin_width;
    let v = link.mean_group_velocity();
    let dz = default_grid_step(dt, v).min(link.shortest_segment());

    let ib_width = ib_spectral_width(exp)?;
    let ib_model = ForwardModel::with_dispersion(link, pulse, dz, ib_width)?;
    let voa: AttenuatorSetting = attenuator(exp, &ib_model)?;
    let acq = Acquire {
        exp,
        gain: optical_gain(pulse.wavelength_nm, &exp.detector, &voa),
        periods: exp.config.acquisition.periods,
        fidelity,
        seed: over.seed.unwrap_or(exp.config.acquisition.seed),
    };
    let opts = exp.config.analysis.events;
    let scale = exp.config.processing.scale();

    let fwhm = spec
        .conventional_fwhm
        .unwrap_or(2.0 * spec.lag as f64 * dt);
    let conv_width = transform_limited_linewidth(fwhm, pulse.wavelength_nm)?;
    let (conv_model, center) = ForwardModel::gaussian(
        link,
        fwhm,
        pulse.period,
        pulse.peak_power,
        conv_width,
        pulse.trigger_delay,
        dz,
    )?;

    let fall_ref = pulse.trigger_delay + pulse.width - 0.5 * pulse.fall_edge;
    let peak_ref = pulse.trigger_delay + center;
    let mut ib_traces = Vec::new();
    let mut ib_events = Vec::new();
    let mut conv_traces = Vec::new();
    let mut conv_events = Vec::new();
    let mut predicted = Vec::new();
    for (k, &z) in reflectors.iter().enumerate() {
        let delay = link.round_trip_delay(z);

        let fall = link.round_trip_broadened_edge(pulse.fall_edge, ib_width, z)?;
        let reach = 0.5 * fall + spec.margin + spec.lag as f64 * dt;
        let config = window(dt, fall_ref + delay - reach, fall_ref + delay + reach)?;
        let hist = acq.counts(&ib_model, &config, 2 * k as u64)?;
        let part = PartSelection {
            direction: Direction::Falling,
            bins: 0..config.bin_count,
            signal_end: config.bin_count,
            dark: None,
            time_reference: fall_ref,
            group_velocity: v,
        };
        let mut trace = differential_trace(&hist, &part, spec.lag)?;
        rescale(&mut trace, scale);
        ib_events.push(strongest(&trace, &opts, z)?);
        ib_traces.push(trace);

        let broad = link.round_trip_broadened_edge(fwhm, conv_width, z)?;
        predicted.push(GAUSSIAN_E2_PER_FWHM * broad * v / 2.0);
        let reach = 4.0 * broad + spec.margin;
        let config = window(dt, peak_ref + delay - reach, peak_ref + delay + reach)?;
        let hist = acq.counts(&conv_model, &config, 2 * k as u64 + 1)?;
        let trace = direct_trace(&hist, exp.detector.dark_rate, peak_ref, v, scale);
        conv_events.push(strongest(&trace, &opts, z)?);
        conv_traces.push(trace);
    }
    let ib_report = resolution_report(&ib_traces[0], &ib_events)?;
    let conv_report = resolution_report(&conv_traces[0], &conv_events)?;
    Ok(DispersionComparison {
        reflectors,
        ib: ModeResult {
            traces: ib_traces,
            events: ib_events,
            report: ib_report,
        },
        conventional: ModeResult {
            traces: conv_traces,
            events: conv_events,
            report: conv_report,
        },
        ib_spectral_width_nm: ib_width,
        conventional_fwhm: fwhm,
        conventional_spectral_width_nm: conv_width,
        predicted_widths: predicted,
    })
}

fn rescale(trace: &mut OtdrTrace, scale: DbScale) {
    trace.db = trace.diff_counts.iter().map(|&x| scale.apply(x)).collect();
    trace.scale = scale;
}

/// Short-pulse trace: counts per bin less the expected dark counts, at
/// position `0.5·(t − t_ref)·v_g`.
fn direct_trace(hist: &Histogram, dark_rate: f64, t_ref: f64, v: f64, scale: DbScale) -> OtdrTrace {
    let c = &hist.config;
    let dark = hist.periods as f64 * dark_rate * c.bin_width;
    let diff: Vec<f64> = hist.counts.iter().map(|&x| x - dark).collect();
    let positions = (0..c.bin_count)
        .map(|m| 0.5 * (c.bin_center(m) - t_ref) * v)
        .collect();
    let mut notes = BTreeMap::new();
    notes.insert("time_reference_s".into(), format!("{t_ref}"));
    OtdrTrace {
        positions,
        db: diff.iter().map(|&x| scale.apply(x)).collect(),
        diff_counts: diff,
        lag: 1,
        direction: Direction::Falling,
        bin_width: c.bin_width,
        group_velocity: v,
        first_bin: 0,
        dark: None,
        periods: hist.periods,
        scale,
        notes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::dispersion_50km;

    #[test]
    fn gaussian_width_constant() {
        let expect = 4.0 / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt());
        assert!((GAUSSIAN_E2_PER_FWHM - expect).abs() < 1e-15);
    }

    #[test]
    fn long_pulse_keeps_resolution_short_pulse_loses_it() {
        let exp = dispersion_50km().unwrap().build().unwrap();
        let c = compare_dispersion(&exp, RunOverrides::default()).unwrap();
        assert!(c.ib.report.pass, "{}", c.summary());
        assert!(!c.conventional.report.pass, "{}", c.summary());
        for (e, z) in c.ib.events.iter().zip(&c.reflectors) {
            assert!((e.position - z).abs() < 0.01, "{} vs {z}", e.position);
        }
        let (m, p) = c.broadening();
        assert!((m - p).abs() < 0.2 * p, "{m} vs {p}");
    }

    #[test]
    fn no_dispersion_both_pass() {
        let mut cfg = dispersion_50km().unwrap();
        for s in &mut cfg.link.segments {
            s.dispersion_ps_per_nm_km = 0.0;
        }
        let c = compare_dispersion(&cfg.build().unwrap(), RunOverrides::default()).unwrap();
        assert!(c.ib.report.pass && c.conventional.report.pass, "{}", c.summary());
    }

    #[test]
    fn events_fidelity_rejected() {
        let exp = dispersion_50km().unwrap().build().unwrap();
        let over = RunOverrides {
            fidelity: Some(Fidelity::Events),
            ..Default::default()
        };
        assert_eq!(compare_dispersion(&exp, over).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn single_reflector_is_an_error() {
        let mut cfg = dispersion_50km().unwrap();
        cfg.link.reflectors.truncate(1);
        assert!(compare_dispersion(&cfg.build().unwrap(), RunOverrides::default()).is_err());
    }
}
