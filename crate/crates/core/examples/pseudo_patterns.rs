//! Draws random bar patterns and, given a trained network, labels them with
//! the network's own decisions.
//!
//! cargo run --release --example pseudo_patterns -- [CHECKPOINT]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spiking_continual::checkpoint::load_network;
use spiking_continual::continual::{build_pseudo_dataset, generate_bar_pattern, BarPatternConfig};
use spiking_continual::encoding::{Encoder, EncoderConfig};

fn main() -> spiking_continual::Result<()> {
    let cfg = BarPatternConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pattern = generate_bar_pattern(&cfg, &mut rng)?;
    println!("{} bars", pattern.bars.len());
    for y in 0..pattern.image.height {
        let row: String = (0..pattern.image.width)
            .map(|x| match pattern.image.get(y, x) {
                v if v > 0.5 => '#',
                v if v > 0.0 => '+',
                _ => '.',
            })
            .collect();
        println!("{row}");
    }

    if let Some(path) = std::env::args().nth(1) {
        let net = load_network(&path)?;
        let encoder = Encoder::new(EncoderConfig::default())?;
        let ds = build_pseudo_dataset(&net, &encoder, 10, &cfg, &mut rng, 100_000)?;
        println!("labelled {} patterns: {:?}", ds.len(), ds.class_histogram());
    }
    Ok(())
}
