//! Trains the full network on the desk-scale digit task and saves it.
//!
//! cargo run --release --example train_task -- [DATA_DIR] [CHECKPOINT]
//!
//! Takes one to two minutes on a single core.

use std::time::Instant;

use spiking_continual::checkpoint::save_network;
use spiking_continual::experiment::{ExperimentConfig, Method, Session};

fn main() -> spiking_continual::Result<()> {
    let mut args = std::env::args().skip(1);
    let data = args.next().unwrap_or_else(|| "data".into());
    let checkpoint = args.next().unwrap_or_else(|| "task1.snnw".into());

    let cfg = ExperimentConfig::desk(&data, Method::LateralInhibition);
    let mut session = Session::new(cfg)?;
    let start = Instant::now();
    let stage = session.task1(&Method::LateralInhibition, 1)?;
    println!("trained in {:.0?}", start.elapsed());
    for (epoch, acc) in stage.readout_trace.iter().enumerate() {
        println!("readout epoch {:>2}: test accuracy {:.1}%", epoch + 1, 100.0 * acc);
    }
    println!(
        "task 1: {:.1}% test, second task before training {:.1}%",
        100.0 * stage.baseline.task1_test,
        100.0 * stage.baseline.task2_test
    );
    save_network(&stage.net, &checkpoint)?;
    println!("saved {checkpoint}");
    Ok(())
}
