//! End-to-end runs: simulate a histogram from a config, turn it into traces
//! and analyze them. The command-line front end is a thin layer over this.

use std::fmt::Write as _;

use crate::config::{Experiment, ProcessingSpec};
use crate::error::{OtdrError, Result};
use crate::photon_detector::{
    fading_gains, optical_gain, recommend_attenuation, AttenuatorSetting,
};
use crate::response::ForwardModel;
use crate::tdc_histogram::{
    expected_from_model, model_for, sample_histogram, simulate_histogram, Fidelity, Histogram,
    HistogramMeta, PulseTiming,
};
use crate::trace_analysis::{analyze, TraceReport};
use crate::trace_processing::{differential_trace, extract_part, to_db, OtdrTrace};

/// Upper limit on expected photon arrivals for photon-level simulation.
pub const MAX_EVENT_ARRIVALS: f64 = 2e9;

/// Run-time overrides of the config's acquisition settings.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunOverrides {
    pub seed: Option<u64>,
    pub fidelity: Option<Fidelity>,
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub histogram: Histogram,
    pub attenuator: AttenuatorSetting,
    pub warnings: Vec<String>,
}

/// Configured attenuator, or the smallest one meeting the linearity target
/// at the plateau power.
pub fn attenuator(exp: &Experiment, model: &ForwardModel) -> Result<AttenuatorSetting> {
    match exp.config.detector.voa_db {
        Some(db) => AttenuatorSetting::new(db),
        None => recommend_attenuation(
            model.power_bound(),
            exp.pulse.wavelength_nm,
            &exp.detector,
            exp.config.detector.linearity_target,
        ),
    }
}

pub fn forward_model(exp: &Experiment) -> Result<ForwardModel> {
    model_for(&exp.link, &exp.pulse, &exp.plan.config)
}

/// Highest detection rate during a period, dark counts included.
pub fn peak_rate(exp: &Experiment, model: &ForwardModel, voa: &AttenuatorSetting) -> f64 {
    optical_gain(exp.pulse.wavelength_nm, &exp.detector, voa) * model.power_bound()
        + exp.detector.dark_rate
}

fn notes(exp: &Experiment, voa: &AttenuatorSetting) -> std::collections::BTreeMap<String, String> {
    let c = &exp.config;
    let mut n = std::collections::BTreeMap::new();
    if let Some(name) = &c.name {
        n.insert("config".into(), name.clone());
    }
    for (i, s) in exp.link.segments().iter().enumerate() {
        n.insert(
            format!("segment.{i}"),
            format!(
                "length={} m att={} dB/km scatter={} dB/km capture={} v_g={} m/s D={} ps/(nm km)",
                s.length_m,
                s.attenuation_db_per_km,
                s.scatter_loss_db_per_km,
                s.capture_fraction,
                s.group_velocity,
                s.dispersion_ps_per_nm_km
            ),
        );
    }
    for (i, r) in exp.link.reflectors().iter().enumerate() {
        n.insert(
            format!("reflector.{i}"),
            format!(
                "{:?} at {} m R={} loss={} dB",
                r.kind, r.position_m, r.reflectance, r.insertion_loss_db
            ),
        );
    }
    n.insert("voa_db".into(), format!("{}", voa.attenuation_db));
    if c.detector.voa_db.is_none() {
        n.insert(
            "voa_rule".into(),
            format!("linearity target {}", c.detector.linearity_target),
        );
    }
    n.insert("peak_power_w".into(), format!("{}", exp.pulse.peak_power));
    n.insert(
        "wavelength_nm".into(),
        format!("{}", exp.pulse.wavelength_nm),
    );
    n.insert(
        "detector".into(),
        format!(
            "eta={} dark={} cps dead={} s ({:?}) jitter={} s",
            exp.detector.efficiency,
            exp.detector.dark_rate,
            exp.detector.dead_time,
            exp.detector.dead_time_kind,
            exp.detector.timing_jitter_sigma
        ),
    );
    if c.acquisition.fading_sigma > 0.0 {
        n.insert(
            "fading_sigma".into(),
            format!("{}", c.acquisition.fading_sigma),
        );
    }
    n
}

/// Simulates the configured acquisition.
pub fn simulate(exp: &Experiment, over: RunOverrides) -> Result<Simulation> {
    let acq = &exp.config.acquisition;
    let seed = over.seed.unwrap_or(acq.seed);
    let fidelity = over.fidelity.unwrap_or(acq.fidelity);
    let config = exp.plan.config;
    let model = forward_model(exp)?;
    let voa = attenuator(exp, &model)?;
    let gain = optical_gain(exp.pulse.wavelength_nm, &exp.detector, &voa);
    let mut warnings = Vec::new();
    let load = peak_rate(exp, &model, &voa) * exp.detector.dead_time;
    if load > 0.1 {
        warnings.push(format!(
            "predicted peak rate × dead time = {load:.3} > 0.1; counts will be strongly nonlinear"
        ));
    } else if fidelity != Fidelity::Events && load > 0.01 {
        warnings.push(format!(
            "{fidelity} fidelity ignores dead time; peak rate × dead time = {load:.3}"
        ));
    }
    let mut histogram = match fidelity {
        Fidelity::Events => {
            let arrivals = acq.periods as f64 * peak_rate(exp, &model, &voa) * exp.pulse.period;
            if arrivals > MAX_EVENT_ARRIVALS {
                return Err(OtdrError::Config(format!(
                    "events fidelity would draw about {arrivals:.2e} arrivals; use poisson fidelity or fewer periods"
                )));
            }
            if acq.fading_sigma > 0.0 {
                warnings.push("fading is not applied in events fidelity".into());
            }
            simulate_histogram(
                &model,
                gain,
                &exp.detector,
                &config,
                acq.periods,
                exp.pulse.period,
                seed,
            )?
        }
        Fidelity::Analytic | Fidelity::Poisson => {
            let mut e = expected_from_model(
                &model,
                gain,
                exp.detector.dark_rate,
                &config,
                acq.periods,
                exp.pulse.period,
            );
            if acq.fading_sigma > 0.0 {
                e = e.with_rayleigh_gains(&fading_gains(
                    config.bin_count,
                    acq.fading_sigma,
                    seed,
                )?)?;
            }
            let periods = e.periods;
            let mut h = e.into_histogram();
            if fidelity == Fidelity::Poisson {
                h = Histogram::from_counts(config, sample_histogram(&h.counts, seed)?, periods)?;
            }
            h
        }
    };
    histogram.meta = HistogramMeta {
        seed: (fidelity != Fidelity::Analytic).then_some(seed),
        fidelity: Some(fidelity),
        timing: Some(PulseTiming::new(&exp.pulse, &exp.link)),
        notes: notes(exp, &voa),
    };
    Ok(Simulation {
        histogram,
        attenuator: voa,
        warnings,
    })
}

/// Falling- or rising-part traces for every configured lag.
pub fn process(hist: &Histogram, spec: &ProcessingSpec) -> Result<Vec<OtdrTrace>> {
    let part = extract_part(hist, spec.direction)?;
    spec.lags
        .iter()
        .map(|&lag| {
            let t = differential_trace(hist, &part, lag)?;
            to_db(&t, spec.db_reference, spec.db_floor, spec.convention)
        })
        .collect()
}

/// Simulation, processing and analysis in one call.
pub fn run(
    exp: &Experiment,
    over: RunOverrides,
) -> Result<(Simulation, Vec<(OtdrTrace, TraceReport)>)> {
    let sim = simulate(exp, over)?;
    let traces = process(&sim.histogram, &exp.config.processing)?;
    let opts = exp.config.analysis_options();
    let analyzed = traces
        .into_iter()
        .map(|t| {
            let r = analyze(&t, &opts)?;
            Ok((t, r))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((sim, analyzed))
}

/// Dynamic range prediction from the noiseless trace: the fitted initial
/// level grows with the period count while the dark-region noise grows with
/// its square root.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynamicRangeModel {
    /// Fitted initial level per period, counts.
    pub initial_per_period: f64,
    /// Expected dark counts per bin per period.
    pub dark_per_bin: f64,
    pub factor: f64,
    pub reference: f64,
}

impl DynamicRangeModel {
    pub fn predict(&self, periods: f64) -> f64 {
        let signal = periods * self.initial_per_period;
        let noise = (2.0 * periods * self.dark_per_bin).sqrt();
        self.factor * (signal / noise).log10()
    }

    /// Period count at which [`predict`](Self::predict) reaches `target_db`.
    pub fn periods_for(&self, target_db: f64) -> f64 {
        let ratio = 10f64.powf(target_db / self.factor);
        (ratio * (2.0 * self.dark_per_bin).sqrt() / self.initial_per_period).powi(2)
    }
}

/// Fits the noiseless single-period trace at `lag`.
pub fn dynamic_range_model(exp: &Experiment, lag: usize) -> Result<DynamicRangeModel> {
    let model = forward_model(exp)?;
    let voa = attenuator(exp, &model)?;
    let gain = optical_gain(exp.pulse.wavelength_nm, &exp.detector, &voa);
    let config = exp.plan.config;
    let mut h = expected_from_model(
        &model,
        gain,
        exp.detector.dark_rate,
        &config,
        1,
        exp.pulse.period,
    )
    .into_histogram();
    h.meta.timing = Some(PulseTiming::new(&exp.pulse, &exp.link));
    let spec = ProcessingSpec {
        lags: vec![lag],
        ..exp.config.processing.clone()
    };
    let trace = process(&h, &spec)?.remove(0);
    let report = analyze(&trace, &exp.config.analysis_options())?;
    let first = report
        .fits
        .first()
        .ok_or_else(|| OtdrError::Analysis("noiseless trace has no fitted segment".into()))?;
    let s = trace.scale;
    let initial = s.reference * 10f64.powf(first.intercept_db / s.convention.factor());
    Ok(DynamicRangeModel {
        initial_per_period: initial,
        dark_per_bin: exp.detector.dark_rate * config.bin_width,
        factor: s.convention.factor(),
        reference: s.reference,
    })
}

/// Periods needed for `target_db` of dynamic range at `lag`, rounded to
/// three significant digits.
pub fn calibrate_periods(exp: &Experiment, lag: usize, target_db: f64) -> Result<u64> {
    let n = dynamic_range_model(exp, lag)?.periods_for(target_db);
    if !(n.is_finite() && n >= 1.0 && n < u64::MAX as f64) {
        return Err(OtdrError::Config(format!(
            "{target_db} dB needs {n:e} periods, outside the representable range"
        )));
    }
    let mag = 10f64.powi(n.log10().floor() as i32 - 2);
    Ok(((n / mag).round() * mag) as u64)
}

/// Human-readable derived quantities of a validated experiment.
pub fn describe(exp: &Experiment) -> Result<String> {
    let mut s = String::new();
    let rt = exp.link.round_trip_time();
    let v = exp.link.mean_group_velocity();
    let cfg = exp.plan.config;
    let model = forward_model(exp)?;
    let voa = attenuator(exp, &model)?;
    let rate = peak_rate(exp, &model, &voa);
    let w = &mut s;
    let _ = writeln!(w, "config={}", exp.config.name.as_deref().unwrap_or("-"));
    let _ = writeln!(w, "fiber_length_m={}", exp.link.total_length());
    let _ = writeln!(w, "round_trip_s={rt:e}");
    let _ = writeln!(w, "pulse_width_s={:e}", exp.pulse.width);
    let _ = writeln!(w, "period_s={:e}", exp.pulse.period);
    let _ = writeln!(w, "constraint_width=PASS (τ ≥ 2L/v_g)");
    let _ = writeln!(w, "constraint_period=PASS (T ≥ 2τ)");
    let _ = writeln!(w, "bin_width_s={:e}", cfg.bin_width);
    let _ = writeln!(w, "bin_count={}", cfg.bin_count);
    let _ = writeln!(w, "coverage_s={:e}", exp.plan.coverage);
    for &lag in &exp.config.processing.lags {
        let _ = writeln!(
            w,
            "resolution_lag{lag}_m={:.6} (physical {:.6})",
            lag as f64 * cfg.bin_width * v,
            0.5 * lag as f64 * cfg.bin_width * v
        );
    }
    let _ = writeln!(w, "voa_db={:.3}", voa.attenuation_db);
    let _ = writeln!(w, "predicted_peak_rate_cps={rate:.4e}");
    let _ = writeln!(
        w,
        "predicted_rate_x_dead_time={:.4e}",
        rate * exp.detector.dead_time
    );
    let _ = writeln!(w, "periods={}", exp.config.acquisition.periods);
    let _ = writeln!(
        w,
        "acquisition_time_s={:.4e}",
        exp.config.acquisition.periods as f64 * exp.pulse.period
    );
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;

    fn small() -> Experiment {
        ExperimentConfig::from_toml(
            r#"
schema_version = 1
[link]
segments = [{ length_m = 300.0 }]
reflectors = [{ kind = "connector", position_m = 0.0 }, { kind = "open_end", position_m = 300.0, reflectance = 1e-3 }]
[pulse]
width = 4e-6
period = 8e-6
[histogram]
bin_width = 1e-9
[acquisition]
periods = 100000000
"#,
        )
        .unwrap()
        .build()
        .unwrap()
    }

    #[test]
    fn fidelities_share_expectations() {
        let exp = small();
        let a = simulate(
            &exp,
            RunOverrides {
                seed: None,
                fidelity: Some(Fidelity::Analytic),
            },
        )
        .unwrap();
        let p = simulate(
            &exp,
            RunOverrides {
                seed: Some(3),
                fidelity: Some(Fidelity::Poisson),
            },
        )
        .unwrap();
        let total_a: f64 = a.histogram.total();
        let total_p: f64 = p.histogram.total();
        assert!((total_p - total_a).abs() < 5.0 * total_a.sqrt());
        assert!(p.histogram.counts.iter().all(|c| c.fract() == 0.0));
        assert_eq!(p.histogram.meta.seed, Some(3));
        assert!(a.histogram.meta.notes.contains_key("voa_db"));
    }

    #[test]
    fn calibration_hits_target() {
        let exp = small();
        let m = dynamic_range_model(&exp, 1).unwrap();
        let n = m.periods_for(15.0);
        assert!((m.predict(n) - 15.0).abs() < 1e-9);
        assert!((m.predict(4.0 * n) - m.predict(n) - 10.0 * 2f64.log10()).abs() < 1e-9);
        let rounded = calibrate_periods(&exp, 1, 15.0).unwrap() as f64;
        assert!((rounded / n - 1.0).abs() < 6e-3);
    }

    #[test]
    fn describe_lists_derived_quantities() {
        let d = describe(&small()).unwrap();
        for key in [
            "round_trip_s=3e-6",
            "voa_db=",
            "predicted_peak_rate_cps=",
            "resolution_lag1_m=0.2",
        ] {
            assert!(d.contains(key), "{key} missing in {d}");
        }
    }
}
