//! Seeded runs give byte-identical CSVs whatever the worker thread count.

use ibotdr::pipeline::{process, simulate, RunOverrides};
use ibotdr::presets::exp_100m;
use ibotdr::tdc_histogram::Fidelity;

fn csv_bytes(threads: usize, fidelity: Fidelity) -> ibotdr::error::Result<(Vec<u8>, Vec<u8>)> {
    let mut cfg = exp_100m()?;
    cfg.acquisition.periods = 20_000;
    let exp = cfg.build()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool");
    pool.install(|| {
        let over = RunOverrides {
            seed: Some(42),
            fidelity: Some(fidelity),
        };
        let sim = simulate(&exp, over)?;
        let trace = process(&sim.histogram, &exp.config.processing)?.remove(0);
        let (mut h, mut t) = (Vec::new(), Vec::new());
        sim.histogram.write_csv(&mut h)?;
        trace.write_csv(&mut t)?;
        Ok((h, t))
    })
}

fn main() -> ibotdr::error::Result<()> {
    for fidelity in [Fidelity::Poisson, Fidelity::Events] {
        let one = csv_bytes(1, fidelity)?;
        let many = csv_bytes(8, fidelity)?;
        println!(
            "{fidelity}: histogram {} bytes identical={}, trace {} bytes identical={}",
            one.0.len(),
            one.0 == many.0,
            one.1.len(),
            one.1 == many.1
        );
    }
    Ok(())
}
