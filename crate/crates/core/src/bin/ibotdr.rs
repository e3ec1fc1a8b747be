use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ibotdr::config::ExperimentConfig;
use ibotdr::dispersion::compare_dispersion;
use ibotdr::error::{OtdrError, Result};
use ibotdr::pipeline::{self, describe, RunOverrides};
use ibotdr::plot::trace_svg;
use ibotdr::presets::{preset, PRESETS};
use ibotdr::tdc_histogram::{Fidelity, Histogram};
use ibotdr::trace_analysis::{analyze, AnalysisOptions, TraceReport};
use ibotdr::trace_processing::{
    auto_detect_falling_part, differential_trace, to_db, DbConvention, Direction, OtdrTrace,
};

#[derive(Parser)]
#[command(name = "ibotdr", version, about = "Infinite-backscatter photon-counting OTDR simulator")]
struct Cli {
    /// Overrides the configured RNG seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured simulation fidelity.
    #[arg(long, global = true, value_parser = parse_fidelity)]
    fidelity: Option<Fidelity>,
    /// Directory for generated files.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Checks a config and prints its derived quantities.
    Validate { config: PathBuf },
    /// Simulates the acquisition and writes the histogram CSV.
    Simulate {
        config: PathBuf,
        /// Output file name inside the output directory.
        #[arg(short, long, default_value = "histogram.csv")]
        output: String,
    },
    /// Turns a histogram CSV into one trace CSV per lag.
    Process {
        histogram: PathBuf,
        #[arg(long = "lag", default_values_t = [1usize])]
        lags: Vec<usize>,
        #[arg(long, default_value = "falling", value_parser = parse_direction)]
        direction: Direction,
        #[arg(long, default_value = "10log", value_parser = parse_convention)]
        convention: DbConvention,
        #[arg(long, default_value_t = 1.0)]
        db_reference: f64,
        #[arg(long, default_value_t = 1.0)]
        db_floor: f64,
        /// Locate the falling part from the counts instead of the stored timing.
        #[arg(long)]
        auto: bool,
        /// Output file prefix; files are named `<prefix>_lag<N>.csv`.
        #[arg(short, long, default_value = "trace")]
        output: String,
    },
    /// Detects events, fits loss and writes the report files and a plot.
    Analyze {
        trace: PathBuf,
        #[arg(long)]
        min_prominence: Option<f64>,
        /// Local SNR an event must reach; 0 disables the filter.
        #[arg(long)]
        min_snr: Option<f64>,
        /// Explicit fit breakpoints, m.
        #[arg(long = "breakpoint")]
        breakpoints: Vec<f64>,
        #[arg(long)]
        no_plot: bool,
    },
    /// Compares long-pulse and short-pulse resolution at each reflector.
    CompareDispersion { config: PathBuf },
    /// Built-in experiments.
    Preset {
        #[command(subcommand)]
        cmd: PresetCmd,
    },
}

#[derive(Subcommand)]
enum PresetCmd {
    /// Lists presets and their assumptions.
    List,
    /// Prints a preset as a config file.
    Show { name: String },
    /// Runs a preset end to end into the output directory.
    Run { name: String },
}

fn parse_fidelity(s: &str) -> std::result::Result<Fidelity, String> {
    s.parse().map_err(|e: OtdrError| e.to_string())
}

fn parse_direction(s: &str) -> std::result::Result<Direction, String> {
    s.parse().map_err(|e: OtdrError| e.to_string())
}

fn parse_convention(s: &str) -> std::result::Result<DbConvention, String> {
    s.parse().map_err(|e: OtdrError| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn overrides(cli: &Cli) -> RunOverrides {
    RunOverrides {
        seed: cli.seed,
        fidelity: cli.fidelity,
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| {
        OtdrError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })
}

fn write_string(dir: &Path, name: &str, text: &str) -> Result<()> {
    let mut w = create(dir, name)?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let out = &cli.out_dir;
    match &cli.cmd {
        Cmd::Validate { config } => {
            let exp = ExperimentConfig::load(config)?.build()?;
            print!("{}", describe(&exp)?);
            println!("status=valid");
        }
        Cmd::Simulate { config, output } => {
            let exp = ExperimentConfig::load(config)?.build()?;
            let sim = pipeline::simulate(&exp, overrides(cli))?;
            for w in &sim.warnings {
                eprintln!("warning: {w}");
            }
            let mut f = create(out, output)?;
            sim.histogram.write_csv(&mut f)?;
            f.flush()?;
            println!("{}", out.join(output).display());
        }
        Cmd::Process {
            histogram,
            lags,
            direction,
            convention,
            db_reference,
            db_floor,
            auto,
            output,
        } => {
            let hist = Histogram::read_csv(open(histogram)?)?;
            let part = if *auto {
                if *direction == Direction::Rising {
                    return Err(OtdrError::Config(
                        "--auto locates the falling part only".into(),
                    ));
                }
                auto_detect_falling_part(&hist, hist.meta.timing.map(|t| t.group_velocity))?
            } else {
                ibotdr::trace_processing::extract_part(&hist, *direction)?
            };
            for &lag in lags {
                let t = differential_trace(&hist, &part, lag)?;
                let t = to_db(&t, *db_reference, *db_floor, *convention)?;
                let name = format!("{output}_lag{lag}.csv");
                let mut f = create(out, &name)?;
                t.write_csv(&mut f)?;
                f.flush()?;
                println!("{}", out.join(&name).display());
            }
        }
        Cmd::Analyze {
            trace,
            min_prominence,
            min_snr,
            breakpoints,
            no_plot,
        } => {
            let t = OtdrTrace::read_csv(open(trace)?)?;
            let mut opts = AnalysisOptions::default();
            if let Some(p) = min_prominence {
                opts.events.min_prominence = *p;
            }
            if let Some(s) = min_snr {
                opts.events.min_snr = (*s > 0.0).then_some(*s);
            }
            if !breakpoints.is_empty() {
                opts.breakpoints = Some(breakpoints.clone());
            }
            let report = analyze(&t, &opts)?;
            let stem = trace
                .file_stem()
                .map_or_else(|| "trace".to_string(), |s| s.to_string_lossy().into_owned());
            write_report(out, &stem, &t, &report, !no_plot)?;
            print!("{}", report.summary());
        }
        Cmd::CompareDispersion { config } => {
            let exp = ExperimentConfig::load(config)?.build()?;
            let c = compare_dispersion(&exp, overrides(cli))?;
            let mut f = create(out, "dispersion.csv")?;
            c.write_csv(&mut f)?;
            f.flush()?;
            let summary = c.summary();
            write_string(out, "dispersion_summary.txt", &summary)?;
            print!("{summary}");
        }
        Cmd::Preset { cmd } => match cmd {
            PresetCmd::List => {
                for p in PRESETS {
                    println!("{}: {}", p.name, p.summary);
                    for a in p.assumptions {
                        println!("  - {a}");
                    }
                }
            }
            PresetCmd::Show { name } => print!("{}", preset(name)?.to_toml()?),
            PresetCmd::Run { name } => run_preset(cli, name)?,
        },
    }
    Ok(())
}

fn write_report(dir: &Path, stem: &str, t: &OtdrTrace, r: &TraceReport, plot: bool) -> Result<()> {
    let mut f = create(dir, &format!("{stem}_events.csv"))?;
    r.write_events_csv(&mut f)?;
    f.flush()?;
    let mut f = create(dir, &format!("{stem}_fits.csv"))?;
    r.write_fits_csv(&mut f)?;
    f.flush()?;
    write_string(dir, &format!("{stem}_summary.txt"), &r.summary())?;
    if plot {
        let title = format!("{stem} (lag {})", t.lag);
        write_string(dir, &format!("{stem}.svg"), &trace_svg(t, Some(r), &title)?)?;
    }
    Ok(())
}

fn run_preset(cli: &Cli, name: &str) -> Result<()> {
    let out = &cli.out_dir;
    let cfg = preset(name)?;
    write_string(out, &format!("{name}.toml"), &cfg.to_toml()?)?;
    let exp = cfg.build()?;
    if exp.config.dispersion.is_some() {
        let c = compare_dispersion(&exp, overrides(cli))?;
        let mut f = create(out, "dispersion.csv")?;
        c.write_csv(&mut f)?;
        f.flush()?;
        let summary = c.summary();
        write_string(out, "dispersion_summary.txt", &summary)?;
        print!("{summary}");
        return Ok(());
    }
    let (sim, analyzed) = pipeline::run(&exp, overrides(cli))?;
    for w in &sim.warnings {
        eprintln!("warning: {w}");
    }
    let mut f = create(out, "histogram.csv")?;
    sim.histogram.write_csv(&mut f)?;
    f.flush()?;
    for (t, r) in &analyzed {
        let stem = format!("trace_lag{}", t.lag);
        let mut f = create(out, &format!("{stem}.csv"))?;
        t.write_csv(&mut f)?;
        f.flush()?;
        write_report(out, &stem, t, r, true)?;
        print!("{}", r.summary());
        println!();
    }
    Ok(())
}
