//! Long-pulse versus short-pulse resolution at 1 km and 49 km.
//!
//! ```text
//! cargo run --release --example dispersion_comparison
//! ```

use ibotdr::dispersion::compare_dispersion;
use ibotdr::pipeline::RunOverrides;
use ibotdr::presets::dispersion_50km;

fn main() -> ibotdr::error::Result<()> {
    let exp = dispersion_50km()?.build()?;
    let c = compare_dispersion(&exp, RunOverrides::default())?;
    print!("{}", c.summary());
    let (measured, predicted) = c.broadening();
    println!(
        "short-pulse far-end broadening: {:.2} cm measured, {:.2} cm predicted",
        measured * 100.0,
        predicted * 100.0
    );
    Ok(())
}
