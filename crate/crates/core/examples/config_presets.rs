//! Prints the desk or paper preset as a TOML config for `snncl`.
//!
//! cargo run --release --example config_presets -- desk|paper [DATA_DIR] > run.toml
//!
//! Relative data paths in a config are resolved against the config file's
//! directory.

use spiking_continual::experiment::{ExperimentConfig, Method};

fn main() -> spiking_continual::Result<()> {
    let mut args = std::env::args().skip(1);
    let preset = args.next().unwrap_or_else(|| "desk".into());
    let data = args.next().unwrap_or_else(|| "data".into());
    let cfg = match preset.as_str() {
        "desk" => ExperimentConfig::desk(&data, Method::LateralInhibition),
        "paper" => ExperimentConfig::paper(&data, Method::LateralInhibition),
        other => {
            eprintln!("unknown preset {other}; use desk or paper");
            std::process::exit(2);
        }
    };
    print!("{}", cfg.to_toml()?);
    Ok(())
}
