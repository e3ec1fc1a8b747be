//! Dead-time nonlinearity of the SNSPD: closed form, Monte Carlo and
//! inversion, plus the attenuator needed for a linearity target.

use ibotdr::photon_detector::{
    dead_time_correct, recommend_attenuation, simulate_events, DetectorModel,
};

fn main() -> ibotdr::error::Result<()> {
    let det = DetectorModel {
        dark_rate: 0.0,
        ..DetectorModel::snspd()
    };
    let period = 100e-6;
    let periods = 2_000;
    println!("{:>8} {:>14} {:>14} {:>14}", "mu*tau", "closed form", "Monte Carlo", "corrected");
    for load in [0.002, 0.02, 0.2] {
        let mu = load / det.dead_time;
        let runs = simulate_events(|_| mu, mu, period, &det, periods, 7)?;
        let n: usize = runs.iter().map(|r| r.timestamps.len()).sum();
        let measured = n as f64 / (periods as f64 * period);
        println!(
            "{load:>8} {:>14.1} {:>14.1} {:>14.1}",
            det.measured_rate(mu),
            measured,
            dead_time_correct(measured, &det)?
        );
    }

    let snspd = DetectorModel::snspd();
    for target in [0.01, 4e-4] {
        let voa = recommend_attenuation(1e-6, 1539.77, &snspd, target)?;
        println!(
            "1 µW at the detector, {:.2} % loss target: {:.2} dB attenuation",
            target * 100.0,
            voa.attenuation_db
        );
    }
    Ok(())
}
