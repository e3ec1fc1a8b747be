//! Single-photon detector: efficiency, dark counts, attenuation and dead time.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gamma, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{OtdrError, Result};
use crate::fiber_link::SPEED_OF_LIGHT;

pub const PLANCK: f64 = 6.626_070_15e-34;

/// Periods simulated per parallel batch. Fixed so results never depend on
/// the thread count.
const BATCH_PERIODS: u64 = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DeadTimeKind {
    #[default]
    NonParalyzable,
    Paralyzable,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    pub efficiency: f64,
    pub dark_rate: f64,
    pub dead_time: f64,
    #[serde(default)]
    pub dead_time_kind: DeadTimeKind,
    #[serde(default)]
    pub timing_jitter_sigma: f64,
}

impl DetectorModel {
    /// Superconducting nanowire detector: 58 % efficiency, 100 Hz dark
    /// counts, 20 ns dead time.
    pub fn snspd() -> Self {
        Self {
            efficiency: 0.58,
            dark_rate: 100.0,
            dead_time: 20e-9,
            dead_time_kind: DeadTimeKind::NonParalyzable,
            timing_jitter_sigma: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(OtdrError::InvalidDetector(m.to_string()));
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return bad("efficiency must lie in (0, 1]");
        }
        if !(self.dark_rate >= 0.0 && self.dark_rate.is_finite()) {
            return bad("dark rate must be ≥ 0");
        }
        if !(self.dead_time >= 0.0 && self.dead_time.is_finite()) {
            return bad("dead time must be ≥ 0");
        }
        if !(self.timing_jitter_sigma >= 0.0 && self.timing_jitter_sigma.is_finite()) {
            return bad("timing jitter must be ≥ 0");
        }
        Ok(())
    }

    /// Registered rate for a true incident rate, from the dead-time model.
    pub fn measured_rate(&self, true_rate: f64) -> f64 {
        match self.dead_time_kind {
            DeadTimeKind::NonParalyzable => true_rate / (1.0 + true_rate * self.dead_time),
            DeadTimeKind::Paralyzable => true_rate * (-true_rate * self.dead_time).exp(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct AttenuatorSetting {
    pub attenuation_db: f64,
}

impl AttenuatorSetting {
    pub fn new(attenuation_db: f64) -> Result<Self> {
        if !(attenuation_db >= 0.0 && attenuation_db.is_finite()) {
            return Err(OtdrError::InvalidDetector(format!(
                "attenuation must be ≥ 0 dB, got {attenuation_db}"
            )));
        }
        Ok(Self { attenuation_db })
    }

    pub fn transmission(&self) -> f64 {
        10f64.powf(-self.attenuation_db / 10.0)
    }
}

/// Photons per joule at the given wavelength.
pub fn photons_per_joule(wavelength_nm: f64) -> f64 {
    wavelength_nm * 1e-9 / (PLANCK * SPEED_OF_LIGHT)
}

/// Detection rate excluding dark counts, per watt of incident power.
pub fn optical_gain(wavelength_nm: f64, detector: &DetectorModel, voa: &AttenuatorSetting) -> f64 {
    detector.efficiency * voa.transmission() * photons_per_joule(wavelength_nm)
}

/// Mean detection rate (before dead time) for an incident optical power.
pub fn photon_rate(
    power: f64,
    wavelength_nm: f64,
    detector: &DetectorModel,
    voa: &AttenuatorSetting,
) -> Result<f64> {
    if !(power >= 0.0) {
        return Err(OtdrError::InvalidArgument(format!(
            "optical power must be ≥ 0, got {power}"
        )));
    }
    Ok(optical_gain(wavelength_nm, detector, voa) * power + detector.dark_rate)
}

/// Inverts the dead-time nonlinearity.
pub fn dead_time_correct(measured_rate: f64, detector: &DetectorModel) -> Result<f64> {
    if !(measured_rate >= 0.0) {
        return Err(OtdrError::InvalidArgument(format!(
            "measured rate must be ≥ 0, got {measured_rate}"
        )));
    }
    let tau = detector.dead_time;
    if tau == 0.0 {
        return Ok(measured_rate);
    }
    let saturated = || OtdrError::Saturation {
        rate: measured_rate,
        dead_time: tau,
    };
    match detector.dead_time_kind {
        DeadTimeKind::NonParalyzable => {
            let x = measured_rate * tau;
            if x >= 1.0 {
                return Err(saturated());
            }
            Ok(measured_rate / (1.0 - x))
        }
        DeadTimeKind::Paralyzable => {
            // measured = μ·e^(−μτ) peaks at μ = 1/τ
            if measured_rate * tau >= 1.0 || measured_rate * tau * std::f64::consts::E > 1.0 {
                return Err(saturated());
            }
            let (mut lo, mut hi) = (0.0f64, 1.0 / tau);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid * (-mid * tau).exp() < measured_rate {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo <= f64::EPSILON * hi {
                    break;
                }
            }
            Ok(0.5 * (lo + hi))
        }
    }
}

/// Highest incident rate whose dead-time loss fraction stays at or below
/// `target`.
pub fn linearity_threshold_rate(dead_time: f64, target: f64) -> f64 {
    target / ((1.0 - target) * dead_time)
}

/// Smallest attenuation that keeps the peak detection rate within the
/// linearity target.
pub fn recommend_attenuation(
    peak_power: f64,
    wavelength_nm: f64,
    detector: &DetectorModel,
    target_linearity_error: f64,
) -> Result<AttenuatorSetting> {
    if !(target_linearity_error > 0.0 && target_linearity_error < 1.0) {
        return Err(OtdrError::InvalidArgument(format!(
            "linearity target must lie in (0, 1), got {target_linearity_error}"
        )));
    }
    if detector.dead_time == 0.0 {
        return Ok(AttenuatorSetting::default());
    }
    let threshold = linearity_threshold_rate(detector.dead_time, target_linearity_error);
    let optical = optical_gain(wavelength_nm, detector, &AttenuatorSetting::default()) * peak_power;
    let budget = threshold - detector.dark_rate;
    if budget <= 0.0 {
        return Err(OtdrError::InvalidDetector(format!(
            "dark rate {} cps alone exceeds the linearity threshold {threshold} cps",
            detector.dark_rate
        )));
    }
    if optical <= budget {
        return Ok(AttenuatorSetting::default());
    }
    AttenuatorSetting::new(10.0 * (optical / budget).log10())
}

/// Detections registered during one probe period.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionEvents {
    pub period_index: u64,
    /// Seconds after the period's trigger, ascending.
    pub timestamps: Vec<f64>,
}

/// Random generator for one period (or bin) of a seeded run.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn raw_arrivals<F>(
    rate_fn: &F,
    rate_bound: f64,
    period: f64,
    jitter: Option<Normal<f64>>,
    seed: u64,
    index: u64,
) -> Result<Vec<f64>>
where
    F: Fn(f64) -> f64 + Sync,
{
    let mut out = Vec::new();
    if rate_bound <= 0.0 {
        return Ok(out);
    }
    let mut rng = substream(seed, index);
    let gap = Exp::new(rate_bound).expect("positive rate");
    let mut t = 0.0;
    loop {
        t += gap.sample(&mut rng);
        if t >= period {
            break;
        }
        let r = rate_fn(t);
        if !(r >= 0.0) || r > rate_bound * (1.0 + 1e-12) {
            return Err(OtdrError::UnboundedRate {
                value: r,
                bound: rate_bound,
                time: t,
            });
        }
        if rng.random::<f64>() * rate_bound < r {
            out.push(t);
        }
    }
    if let Some(n) = jitter {
        for t in &mut out {
            *t += n.sample(&mut rng);
        }
        out.sort_by(f64::total_cmp);
    }
    Ok(out)
}

/// Dead-time filter that carries its state across period boundaries.
struct DeadTimeGate {
    dead_time: f64,
    kind: DeadTimeKind,
    period: f64,
    last: Option<(u64, f64)>,
}

impl DeadTimeGate {
    fn admit(&mut self, period_index: u64, t: f64) -> bool {
        let open = match self.last {
            None => true,
            Some((k, s)) => (period_index - k) as f64 * self.period + (t - s) >= self.dead_time,
        };
        match self.kind {
            DeadTimeKind::NonParalyzable => {
                if open {
                    self.last = Some((period_index, t));
                }
            }
            DeadTimeKind::Paralyzable => self.last = Some((period_index, t)),
        }
        open
    }
}

/// Streams the detections of `periods` consecutive probe periods to `sink`,
/// in period order.
///
/// `rate_fn` gives the incident detection rate (photons plus dark counts)
/// at time `t ∈ [0, period)` after the trigger and must never exceed
/// `rate_bound`. Arrivals are drawn by thinning a homogeneous process at
/// `rate_bound`; jitter is added before dead time. Each period draws from its
/// own substream of `seed`, so output is identical for any thread count.
pub fn simulate_events_with<F, S>(
    rate_fn: F,
    rate_bound: f64,
    period: f64,
    detector: &DetectorModel,
    periods: u64,
    seed: u64,
    mut sink: S,
) -> Result<u64>
where
    F: Fn(f64) -> f64 + Sync,
    S: FnMut(DetectionEvents),
{
    detector.validate()?;
    if periods == 0 {
        return Err(OtdrError::InvalidArgument("periods must be ≥ 1".into()));
    }
    if !(period > 0.0 && period.is_finite()) {
        return Err(OtdrError::InvalidArgument(format!(
            "period must be > 0, got {period}"
        )));
    }
    if !(rate_bound >= 0.0 && rate_bound.is_finite()) {
        return Err(OtdrError::InvalidArgument(format!(
            "rate bound must be finite and ≥ 0, got {rate_bound}"
        )));
    }
    let jitter = (detector.timing_jitter_sigma > 0.0)
        .then(|| Normal::new(0.0, detector.timing_jitter_sigma).expect("finite sigma"));
    let mut gate = DeadTimeGate {
        dead_time: detector.dead_time,
        kind: detector.dead_time_kind,
        period,
        last: None,
    };
    let mut total = 0u64;
    let mut start = 0u64;
    while start < periods {
        let end = (start + BATCH_PERIODS).min(periods);
        let batch = (start..end)
            .into_par_iter()
            .map(|k| raw_arrivals(&rate_fn, rate_bound, period, jitter, seed, k))
            .collect::<Result<Vec<_>>>()?;
        for (k, arrivals) in (start..end).zip(batch) {
            let timestamps: Vec<f64> = if detector.dead_time > 0.0 {
                arrivals.into_iter().filter(|&t| gate.admit(k, t)).collect()
            } else {
                arrivals
            };
            total += timestamps.len() as u64;
            sink(DetectionEvents {
                period_index: k,
                timestamps,
            });
        }
        start = end;
    }
    Ok(total)
}

/// Collecting form of [`simulate_events_with`].
pub fn simulate_events<F>(
    rate_fn: F,
    rate_bound: f64,
    period: f64,
    detector: &DetectorModel,
    periods: u64,
    seed: u64,
) -> Result<Vec<DetectionEvents>>
where
    F: Fn(f64) -> f64 + Sync,
{
    let mut out = Vec::with_capacity(periods.min(1 << 20) as usize);
    simulate_events_with(rate_fn, rate_bound, period, detector, periods, seed, |e| {
        out.push(e)
    })?;
    Ok(out)
}

/// Multiplicative Rayleigh-fading gains with mean 1 and relative standard
/// deviation `sigma`, one per bin (gamma distributed, so always positive).
pub fn fading_gains(bins: usize, sigma: f64, seed: u64) -> Result<Vec<f64>> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(OtdrError::InvalidArgument(format!(
            "fading sigma must be ≥ 0, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(vec![1.0; bins]);
    }
    let shape = 1.0 / (sigma * sigma);
    let g = Gamma::new(shape, sigma * sigma).expect("positive shape");
    // offset stream space so gains never share a stream with counts
    Ok((0..bins)
        .into_par_iter()
        .map(|m| g.sample(&mut substream(seed, (1u64 << 63) | m as u64)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn det(dead: f64) -> DetectorModel {
        DetectorModel {
            dead_time: dead,
            dark_rate: 0.0,
            ..DetectorModel::snspd()
        }
    }

    #[test]
    fn rate_examples() {
        let d = DetectorModel::snspd();
        let open = AttenuatorSetting::default();
        assert_eq!(photon_rate(0.0, 1550.0, &d, &open).unwrap(), 100.0);
        let photon_energy = PLANCK * SPEED_OF_LIGHT / 1550e-9;
        assert_relative_eq!(photon_energy, 1.282e-19, max_relative = 1e-3);
        let r = photon_rate(1e-12, 1550.0, &d, &open).unwrap() - 100.0;
        assert_relative_eq!(r, 0.58e-12 / photon_energy, max_relative = 1e-12);
        assert_relative_eq!(r, 4.53e6, max_relative = 1e-3);
        let ten = AttenuatorSetting::new(10.0).unwrap();
        let r10 = photon_rate(1e-12, 1550.0, &d, &ten).unwrap() - 100.0;
        assert_relative_eq!(r10 * 10.0, r, max_relative = 1e-14);
        assert!(photon_rate(-1.0, 1550.0, &d, &open).is_err());
        assert!(AttenuatorSetting::new(-1.0).is_err());
    }

    #[test]
    fn correction_examples() {
        let d = det(20e-9);
        assert_eq!(dead_time_correct(0.0, &d).unwrap(), 0.0);
        assert_relative_eq!(
            dead_time_correct(980_392.156_862_745, &d).unwrap(),
            1e6,
            max_relative = 1e-9
        );
        assert!(matches!(
            dead_time_correct(1.0 / 20e-9, &d),
            Err(OtdrError::Saturation { .. })
        ));
        let p = DetectorModel {
            dead_time_kind: DeadTimeKind::Paralyzable,
            ..d
        };
        let mu = 2e6;
        let m = p.measured_rate(mu);
        assert_relative_eq!(dead_time_correct(m, &p).unwrap(), mu, max_relative = 1e-12);
        assert!(dead_time_correct(0.5 / 20e-9, &p).is_err());
    }

    #[test]
    fn attenuation_examples() {
        let d = det(20e-9);
        assert_relative_eq!(
            linearity_threshold_rate(20e-9, 0.01),
            5.05e5,
            max_relative = 1e-3
        );
        assert_relative_eq!(
            linearity_threshold_rate(20e-9, 0.001),
            5.005e4,
            max_relative = 1e-3
        );
        let per_watt = optical_gain(1550.0, &d, &AttenuatorSetting::default());
        let tiny = recommend_attenuation(1e5 / per_watt, 1550.0, &d, 0.01).unwrap();
        assert_eq!(tiny.attenuation_db, 0.0);
        let threshold = linearity_threshold_rate(20e-9, 0.01);
        let a = recommend_attenuation(10.0 * threshold / per_watt, 1550.0, &d, 0.01).unwrap();
        assert_relative_eq!(a.attenuation_db, 10.0, max_relative = 1e-9);
        // the attenuated peak sits exactly on the linearity target
        let r = threshold;
        assert_relative_eq!(r * 20e-9 / (1.0 + r * 20e-9), 0.01, max_relative = 1e-12);
    }

    #[test]
    fn zero_rate_gives_no_events() {
        let ev = simulate_events(|_| 0.0, 0.0, 1e-6, &det(20e-9), 100, 1).unwrap();
        assert_eq!(ev.len(), 100);
        assert!(ev.iter().all(|e| e.timestamps.is_empty()));
        let ev = simulate_events(|_| 0.0, 1e6, 1e-6, &det(20e-9), 100, 1).unwrap();
        assert!(ev.iter().all(|e| e.timestamps.is_empty()));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(simulate_events(|_| 1.0, 1.0, 1e-6, &det(0.0), 0, 1).is_err());
        let err = simulate_events(|_| 2e6, 1e6, 1e-6, &det(0.0), 10, 1).unwrap_err();
        assert!(matches!(err, OtdrError::UnboundedRate { .. }));
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let rate = |t: f64| 3e6 * (1.0 + (t * 1e7).sin()) + 10.0;
        let d = DetectorModel {
            timing_jitter_sigma: 1e-10,
            ..det(20e-9)
        };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| simulate_events(rate, 6e6 + 10.0, 1e-6, &d, 5000, 42).unwrap())
        };
        let a = run(1);
        let b = run(7);
        assert_eq!(a, b);
        assert!(a.iter().map(|e| e.timestamps.len()).sum::<usize>() > 1000);
    }

    #[test]
    fn non_paralyzable_gaps_and_rate() {
        let d = det(20e-9);
        let period = 1e-6;
        let periods = 200_000;
        let mut last: Option<f64> = None;
        let mut count = 0u64;
        simulate_events_with(
            |_| 1e6,
            1e6,
            period,
            &d,
            periods,
            9,
            |e| {
                for &t in &e.timestamps {
                    let abs = e.period_index as f64 * period + t;
                    if let Some(l) = last {
                        assert!(abs - l >= 20e-9 * (1.0 - 1e-9));
                    }
                    last = Some(abs);
                    count += 1;
                }
            },
        )
        .unwrap();
        let measured = count as f64 / (periods as f64 * period);
        let expect = 1e6 / (1.0 + 1e6 * 20e-9);
        let sigma = (expect * periods as f64 * period).sqrt() / (periods as f64 * period);
        assert!(
            (measured - expect).abs() < 4.0 * sigma,
            "{measured} vs {expect}"
        );
    }

    #[test]
    fn fading_has_unit_mean() {
        let g = fading_gains(20_000, 0.3, 5).unwrap();
        let mean = g.iter().sum::<f64>() / g.len() as f64;
        let var = g.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / g.len() as f64;
        assert!((mean - 1.0).abs() < 0.01);
        assert!((var.sqrt() - 0.3).abs() < 0.01);
        assert!(g.iter().all(|&x| x > 0.0));
        assert_eq!(fading_gains(3, 0.0, 5).unwrap(), vec![1.0; 3]);
    }

    proptest! {
        #[test]
        fn correction_inverts_forward(mu in 0.0f64..4e7, tau in 1e-10f64..1e-7) {
            let d = det(tau);
            let m = d.measured_rate(mu);
            let back = dead_time_correct(m, &d).unwrap();
            prop_assert!((back - mu).abs() <= 1e-12 * mu.max(1e-300) * 4.0);
        }

        #[test]
        fn timestamps_sorted_and_in_period(seed in any::<u64>()) {
            let ev = simulate_events(|t| 5e6 * t / 1e-6, 5e6, 1e-6, &det(0.0), 20, seed).unwrap();
            for e in ev {
                prop_assert!(e.timestamps.windows(2).all(|w| w[0] < w[1]));
                prop_assert!(e.timestamps.iter().all(|&t| (0.0..1e-6).contains(&t)));
            }
        }
    }
}
