//! Samples the readout weights of a trained network with noisy learning and
//! turns the samples into per-synapse bounds.
//!
//! cargo run --release --example langevin_bounds -- [DATA_DIR]

use spiking_continual::continual::{decile_bounds, LangevinConfig};
use spiking_continual::experiment::{ExperimentConfig, Method, Session};

fn main() -> spiking_continual::Result<()> {
    let data = std::env::args().nth(1).unwrap_or_else(|| "data".into());
    let method = Method::Langevin(LangevinConfig::desk());
    let mut session = Session::new(ExperimentConfig::desk(&data, method.clone()))?;
    let run = session.run(&method, 1)?;
    let outcome = run.langevin.expect("langevin runs sample");

    println!("{} steps, {} snapshots", outcome.steps, outcome.store.len());
    for (step, acc) in &outcome.accuracy_trace {
        println!("step {step:>6}: held-out accuracy {:.1}%", 100.0 * acc);
    }
    let bounds = decile_bounds(&outcome.store)?;
    let mut widths = bounds.importance();
    widths.sort_by(f64::total_cmp);
    let q = |f: f64| widths[((widths.len() - 1) as f64 * f) as usize];
    println!(
        "interval widths: min {:.4} median {:.4} max {:.4}",
        q(0.0),
        q(0.5),
        q(1.0)
    );
    let last = run.log.rows.last().expect("rows");
    println!(
        "after the second task: task 1 {:.1}%, task 2 {:.1}%",
        100.0 * last.task1_test,
        100.0 * last.task2_test
    );
    Ok(())
}
