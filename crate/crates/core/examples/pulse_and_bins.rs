//! Probe constraints and TDC bin planning for a 50 km link.

use ibotdr::fiber_link::{FiberLink, FiberSegment, Reflector};
use ibotdr::probe_pulse::{transform_limited_linewidth, ProbePulse};
use ibotdr::tdc_histogram::{plan_bins, DEFAULT_BIN_CAP};

fn main() -> ibotdr::error::Result<()> {
    let link = FiberLink::new(
        vec![FiberSegment::smf(50_000.0)],
        vec![Reflector::connector(0.0), Reflector::connector(50_000.0)],
    )?;
    let pulse = ProbePulse {
        width: 550e-6,
        period: 1.2e-3,
        rise_edge: 2.5e-9,
        fall_edge: 2.5e-9,
        peak_power: 1e-3,
        wavelength_nm: 1539.77,
        linewidth_nm: 1e-4,
        trigger_delay: 0.0,
    };
    let rt = pulse.validate_against_link(&link).into_result()?;
    println!("550 µs / 1.2 ms: valid, round trip {:.1} µs", rt * 1e6);

    let short = ProbePulse {
        width: 400e-6,
        ..pulse
    };
    let check = short.validate_against_link(&link);
    for v in &check.violations {
        println!("400 µs rejected: {v}");
    }

    println!("minimum bin width {:.2} ns", pulse.period / DEFAULT_BIN_CAP as f64 * 1e9);
    for requested in [0.1e-9, 50e-9, 100e-9] {
        let plan = plan_bins(&link, &pulse, requested, DEFAULT_BIN_CAP)?;
        let c = plan.config;
        println!(
            "requested {:>6.1} ns -> {:.1} ns x {} bins, {:.2} m per sample",
            requested * 1e9,
            c.bin_width * 1e9,
            c.bin_count,
            0.5 * c.bin_width * link.mean_group_velocity()
        );
    }

    for w in [20e-12, 1e-9, 2.5e-9] {
        println!(
            "transform-limited linewidth of a {:.0} ps pulse: {:.2e} nm",
            w * 1e12,
            transform_limited_linewidth(w, pulse.wavelength_nm)?
        );
    }
    Ok(())
}
