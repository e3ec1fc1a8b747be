//! Event detection, loss fits, dynamic range and a plot for one trace.
//!
//! ```text
//! cargo run --release --example analyze_trace [trace.csv] [out.svg]
//! ```
//! Without arguments the 100 m preset is simulated first.

use std::fs::File;
use std::io::BufReader;

use ibotdr::pipeline::{process, simulate, RunOverrides};
use ibotdr::plot::trace_svg;
use ibotdr::presets::exp_100m;
use ibotdr::trace_analysis::{analyze, AnalysisOptions, EventOptions};
use ibotdr::trace_processing::OtdrTrace;

fn main() -> ibotdr::error::Result<()> {
    let mut args = std::env::args().skip(1);
    let trace = match args.next() {
        Some(path) => OtdrTrace::read_csv(BufReader::new(File::open(path)?))?,
        None => {
            let exp = exp_100m()?.build()?;
            let sim = simulate(&exp, RunOverrides::default())?;
            process(&sim.histogram, &exp.config.processing)?.remove(0)
        }
    };
    let opts = AnalysisOptions {
        events: EventOptions {
            min_snr: Some(8.0),
            ..EventOptions::default()
        },
        ..AnalysisOptions::default()
    };
    let report = analyze(&trace, &opts)?;
    for e in &report.events {
        println!(
            "event at {:>9.3} m: width {:.3} m, prominence {:.3e}",
            e.position, e.width_1e2, e.prominence
        );
    }
    for f in &report.fits {
        println!(
            "segment {:>8.2}..{:<8.2} m: {:+.3} dB/km over {} samples",
            f.start, f.end, f.slope_db_per_km, f.samples
        );
    }
    if let Some(dr) = report.dynamic_range {
        println!("dynamic range {:.2} dB", dr.dynamic_range_db);
    }
    let out = args
        .next()
        .unwrap_or_else(|| std::env::temp_dir().join("ibotdr_trace.svg").display().to_string());
    std::fs::write(&out, trace_svg(&trace, Some(&report), "trace")?)?;
    println!("plot written to {out}");
    Ok(())
}
