//! Weight histogram of the readout layer and accuracy as the smallest
//! readout weights are pruned.
//!
//! cargo run --release --example prune_and_histogram -- CHECKPOINT [DATA_DIR]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spiking_continual::checkpoint::load_network;
use spiking_continual::data::{subset_balanced, SourceFormat, TaskSource};
use spiking_continual::encoding::{Encoder, EncoderConfig};
use spiking_continual::experiment::{prune_sweep, weight_histogram};

fn main() -> spiking_continual::Result<()> {
    let mut args = std::env::args().skip(1);
    let checkpoint = args.next().expect("usage: prune_and_histogram CHECKPOINT [DATA_DIR]");
    let data = args.next().unwrap_or_else(|| "data".into());
    let net = load_network(&checkpoint)?;

    let hist = weight_histogram(&net, net.output_layer(), 12)?;
    for (edge, mass) in hist.edges.windows(2).zip(&hist.mass) {
        println!("[{:.2}, {:.2}) {:>6.2}% {}", edge[0], edge[1], 100.0 * mass, "#".repeat((mass * 60.0) as usize));
    }

    let test = TaskSource::idx_dir("mnist", format!("{data}/mnist"), SourceFormat::Digits).load_test()?;
    let test = subset_balanced(&test, 100, 10, &mut ChaCha8Rng::seed_from_u64(1))?;
    let encoder = Encoder::new(EncoderConfig::default())?;
    for (fraction, acc) in prune_sweep(&net, &encoder, &test, &[0.0, 0.5, 0.9, 0.95, 1.0])? {
        println!("pruned {:>4.0}%: accuracy {:.1}%", 100.0 * fraction, 100.0 * acc);
    }
    Ok(())
}
