//! Differential processing of a noiseless histogram: falling and rising
//! parts, lag-N traces and the telescoping sum that links them.

use ibotdr::fiber_link::{FiberLink, FiberSegment, Reflector};
use ibotdr::photon_detector::{optical_gain, AttenuatorSetting, DetectorModel};
use ibotdr::probe_pulse::ProbePulse;
use ibotdr::tdc_histogram::{expected_from_model, model_for, plan_bins, PulseTiming};
use ibotdr::trace_processing::{differential_trace, extract_falling_part, extract_rising_part};

fn main() -> ibotdr::error::Result<()> {
    let link = FiberLink::new(
        vec![FiberSegment::smf(1_000.0), FiberSegment::smf(1_000.0)],
        vec![Reflector::connector(1_000.0), Reflector::open_end(2_000.0)],
    )?;
    let pulse = ProbePulse {
        width: 25e-6,
        period: 60e-6,
        rise_edge: 2.5e-9,
        fall_edge: 2.5e-9,
        peak_power: 1e-3,
        wavelength_nm: 1539.77,
        linewidth_nm: 1e-4,
        trigger_delay: 0.0,
    };
    let det = DetectorModel::snspd();
    let config = plan_bins(&link, &pulse, 5e-9, 16_384)?.config;
    let model = model_for(&link, &pulse, &config)?;
    let gain = optical_gain(pulse.wavelength_nm, &det, &AttenuatorSetting::new(40.0)?);
    let mut hist = expected_from_model(&model, gain, det.dark_rate, &config, 1_000_000, pulse.period)
        .into_histogram();
    hist.meta.timing = Some(PulseTiming::new(&pulse, &link));

    let fall = extract_falling_part(&hist)?;
    let rise = extract_rising_part(&hist)?;
    println!("falling part bins {:?}, rising part bins {:?}", fall.bins, rise.bins);

    let one = differential_trace(&hist, &fall, 1)?;
    for lag in [1, 4, 16] {
        let t = differential_trace(&hist, &fall, lag)?;
        let peak = t
            .diff_counts
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        // the lag-N sample is the sum of N consecutive lag-1 samples
        let j = t.len() / 2;
        let k = t.first_bin + j - one.first_bin;
        let sum: f64 = one.diff_counts[k..k + lag].iter().sum();
        println!(
            "lag {lag:>2}: {} samples, resolution {:.2} m, strongest sample at {:.2} m, telescoping error {:.1e}",
            t.len(),
            t.nominal_resolution(),
            t.positions[peak],
            (t.diff_counts[j] - sum).abs() / sum.abs().max(1.0)
        );
    }

    let r = differential_trace(&hist, &rise, 1)?;
    let near = |t: &ibotdr::trace_processing::OtdrTrace| {
        let i = t.positions.iter().position(|&z| z >= 500.0).unwrap_or(0);
        t.diff_counts[i]
    };
    println!(
        "counts at 500 m: falling {:.1}, rising {:.1}",
        near(&one),
        near(&r)
    );
    Ok(())
}
