//! Loss, backscatter and dispersion along a two-segment link.

use ibotdr::fiber_link::{FiberLink, FiberSegment, Reflector};

fn main() -> ibotdr::error::Result<()> {
    let link = FiberLink::new(
        vec![FiberSegment::smf(10_000.0), FiberSegment::smf(15_000.0)],
        vec![
            Reflector::connector(0.0),
            Reflector::splice(10_000.0),
            Reflector::open_end(25_000.0),
        ],
    )?;
    println!(
        "length {} m, round trip {:.3} µs",
        link.total_length(),
        link.round_trip_time() * 1e6
    );

    println!("{:>8} {:>10} {:>12} {:>14}", "z (m)", "loss (dB)", "D_cum (ps/nm)", "edge@0.1nm (ps)");
    for z in [0.0, 5_000.0, 10_000.0, 20_000.0, 25_000.0] {
        println!(
            "{z:>8} {:>10.3} {:>12.1} {:>14.1}",
            link.one_way_loss_db(z),
            link.accumulated_dispersion(z),
            link.round_trip_broadened_edge(2.5e-9, 0.1, z)? * 1e12
        );
    }

    let profile = link.impulse_profile(1e-3, 10.0)?;
    println!(
        "backscatter for 1 mW launched: Rayleigh {:.3e} W total over {} cells",
        profile.total_rayleigh(),
        profile.positions.len()
    );
    for (z, p) in &profile.fresnel_power {
        println!("  reflection at {z} m: {p:.3e} W");
    }
    Ok(())
}
