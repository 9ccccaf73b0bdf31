//! Encodes a synthetic stroke image and prints the spike wave it produces.
//!
//! cargo run --release --example encode_image

use spiking_continual::encoding::{Encoder, EncoderConfig, Image, NEVER};

fn main() -> spiking_continual::Result<()> {
    let mut pixels = vec![0.0; 28 * 28];
    for t in 4..24 {
        pixels[t * 28 + 14] = 1.0;
        pixels[(t / 2 + 8) * 28 + t] = 0.7;
    }
    let image = Image::new(28, 28, pixels)?;
    let encoder = Encoder::new(EncoderConfig::default())?;
    let wave = encoder.encode(&image)?;

    println!(
        "{} channels x {}x{} over {} time bins, {} spikes",
        wave.channels,
        wave.height,
        wave.width,
        wave.time_bins,
        wave.spike_count()
    );
    let plane = wave.height * wave.width;
    for c in 0..wave.channels {
        let spikes = wave.latency[c * plane..(c + 1) * plane].iter().filter(|&&t| t != NEVER).count();
        println!("channel {c}: {spikes} spikes");
    }
    let mut per_bin = vec![0usize; wave.time_bins];
    for &t in wave.latency.iter().filter(|&&t| t != NEVER) {
        per_bin[usize::from(t)] += 1;
    }
    println!("spikes per time bin: {per_bin:?}");

    // earliest bin of the on-center channel of the finest scale
    for y in 0..wave.height {
        let row: String = (0..wave.width)
            .map(|x| match wave.latency_at(0, y, x) {
                NEVER => '.',
                t if t < 5 => '#',
                _ => '+',
            })
            .collect();
        println!("{row}");
    }
    Ok(())
}
