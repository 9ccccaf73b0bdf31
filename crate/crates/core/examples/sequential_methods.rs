//! Trains on digits, then on clothing, under several continual-learning
//! methods, and prints how much of the first task each one keeps.
//!
//! cargo run --release --example sequential_methods -- [DATA_DIR] [SEED]
//!
//! Runs for roughly fifteen minutes on a single core.

use spiking_continual::continual::LangevinConfig;
use spiking_continual::experiment::{aggregate, ExperimentConfig, Method, Session};

fn main() -> spiking_continual::Result<()> {
    let mut args = std::env::args().skip(1);
    let data = args.next().unwrap_or_else(|| "data".into());
    let seed: u64 = args.next().map_or(1, |s| s.parse().expect("seed"));

    let methods = [
        Method::Vanilla,
        Method::LateralInhibition,
        Method::Joint,
        Method::Fewshot { per_class: 24 },
        Method::Freeze { fraction: 0.1 },
        Method::Langevin(LangevinConfig::desk()),
    ];
    let mut session = Session::new(ExperimentConfig::desk(&data, Method::Vanilla))?;
    let mut logs = Vec::new();
    for method in &methods {
        let run = session.run(method, seed)?;
        logs.push(run.log);
    }
    println!("{:<22} {:>9} {:>9} {:>9}", "method", "task1 t0", "task1 end", "task2 end");
    for row in aggregate(&logs).rows {
        println!(
            "{:<22} {:>8.1}% {:>8.1}% {:>8.1}%",
            row.method,
            100.0 * row.task1_initial.mean,
            100.0 * row.task1_final.mean,
            100.0 * row.task2_final.mean
        );
    }
    Ok(())
}
