//! Experiments as TOML: parse, validate, print derived quantities and
//! serialize back. Schema and physics errors map to distinct exit codes.

use ibotdr::config::ExperimentConfig;
use ibotdr::pipeline::describe;

const CONFIG: &str = r#"
schema_version = 1
name = "two-km-demo"

[[link.segments]]
length_m = 2000.0

[[link.reflectors]]
kind = "connector"
position_m = 800.0

[[link.reflectors]]
kind = "open_end"
position_m = 2000.0

[pulse]
width = 25e-6
period = 60e-6

[histogram]
bin_width = 5e-9

[acquisition]
periods = 1000000
fidelity = "analytic"

[processing]
lags = [1, 4]
"#;

fn main() -> ibotdr::error::Result<()> {
    let cfg = ExperimentConfig::from_toml(CONFIG)?;
    let exp = cfg.build()?;
    print!("{}", describe(&exp)?);

    let again = ExperimentConfig::from_toml(&cfg.to_toml()?)?;
    println!("round trip identical: {}", again == cfg);

    let typo = CONFIG.replace("[pulse]", "[pulse]\nwidht = 1.0");
    if let Err(e) = ExperimentConfig::from_toml(&typo) {
        println!("unknown field -> exit {}: {e}", e.exit_code());
    }
    let short = CONFIG.replace("width = 25e-6", "width = 15e-6");
    if let Err(e) = ExperimentConfig::from_toml(&short)?.build() {
        println!("pulse too short -> exit {}: {e}", e.exit_code());
    }
    Ok(())
}
