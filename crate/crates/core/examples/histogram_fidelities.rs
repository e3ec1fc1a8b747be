//! One short link acquired three ways: expected counts, per-bin Poisson
//! draws and photon-level Monte Carlo with dead time.

use ibotdr::fiber_link::{FiberLink, FiberSegment, Reflector};
use ibotdr::photon_detector::{optical_gain, recommend_attenuation, DetectorModel};
use ibotdr::probe_pulse::ProbePulse;
use ibotdr::tdc_histogram::{
    expected_from_model, model_for, plan_bins, sample_histogram, simulate_histogram,
};

fn main() -> ibotdr::error::Result<()> {
    let link = FiberLink::new(
        vec![FiberSegment::smf(100.0), FiberSegment::smf(100.0)],
        vec![Reflector::connector(100.0), Reflector::open_end(200.0)],
    )?;
    let pulse = ProbePulse {
        width: 2.5e-6,
        period: 6e-6,
        rise_edge: 2.5e-9,
        fall_edge: 2.5e-9,
        peak_power: 1e-3,
        wavelength_nm: 1539.77,
        linewidth_nm: 1e-4,
        trigger_delay: 0.0,
    };
    let det = DetectorModel::snspd();
    let config = plan_bins(&link, &pulse, 1e-9, 16_384)?.config;
    let model = model_for(&link, &pulse, &config)?;
    let voa = recommend_attenuation(model.power_bound(), pulse.wavelength_nm, &det, 0.01)?;
    let gain = optical_gain(pulse.wavelength_nm, &det, &voa);
    let periods = 200_000;

    let expected = expected_from_model(&model, gain, det.dark_rate, &config, periods, pulse.period).total();
    let poisson = sample_histogram(&expected, 1)?;
    let mc = simulate_histogram(&model, gain, &det, &config, periods, pulse.period, 1)?;

    let plateau = 1500..2400;
    let mean = |c: &[f64]| c[plateau.clone()].iter().sum::<f64>() / plateau.len() as f64;
    println!("attenuator {:.2} dB, {} bins of {} ns", voa.attenuation_db, config.bin_count, config.bin_width * 1e9);
    println!("plateau mean counts per bin:");
    println!("  expected  {:.2}", mean(&expected));
    println!("  poisson   {:.2}", mean(&poisson));
    println!("  events    {:.2} (dead time loss {:.2} %)", mean(&mc.counts), 100.0 * (1.0 - mean(&mc.counts) / mean(&expected)));
    println!(
        "totals: expected {:.0}, poisson {:.0}, events {:.0}",
        expected.iter().sum::<f64>(),
        poisson.iter().sum::<f64>(),
        mc.total()
    );
    Ok(())
}
