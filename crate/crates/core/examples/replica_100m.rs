//! Short-link replica: five reflective events, edge-limited resolution and
//! the dynamic range of the lag-1 falling-part trace.

use ibotdr::pipeline::{run, RunOverrides};
use ibotdr::presets::exp_100m;

fn main() -> ibotdr::error::Result<()> {
    let exp = exp_100m()?.build()?;
    println!("periods: {:e}", exp.config.acquisition.periods as f64);
    let (sim, traces) = run(&exp, RunOverrides::default())?;
    println!("attenuator: {:.2} dB", sim.attenuator.attenuation_db);
    for (_, report) in &traces {
        print!("{}", report.summary());
    }
    Ok(())
}
