//! Runs one image through a saved network and shows every layer's activity.
//!
//! cargo run --release --example forward_pass -- CHECKPOINT [DATA_DIR] [INDEX]
//!
//! Produce a checkpoint with the `train_task` example.

use spiking_continual::checkpoint::load_network;
use spiking_continual::data::{SourceFormat, TaskSource};
use spiking_continual::encoding::{Encoder, EncoderConfig};
use spiking_continual::snn::{decide, forward};

fn main() -> spiking_continual::Result<()> {
    let mut args = std::env::args().skip(1);
    let checkpoint = args.next().expect("usage: forward_pass CHECKPOINT [DATA_DIR] [INDEX]");
    let data = args.next().unwrap_or_else(|| "data".into());
    let index: usize = args.next().map_or(0, |s| s.parse().expect("index"));

    let net = load_network(&checkpoint)?;
    let test = TaskSource::idx_dir("mnist", format!("{data}/mnist"), SourceFormat::Digits).load_test()?;
    let encoder = Encoder::new(EncoderConfig::default())?;
    let wave = encoder.encode(&test.image(index))?;
    println!("input: {} spikes over {} channels", wave.spike_count(), wave.channels);

    let outputs = forward(&wave, &net)?;
    for (spec, out) in net.layers.iter().zip(&outputs) {
        println!(
            "{:<3} {:>3} maps {:>2}x{:<2} {:>5} spikes",
            spec.name,
            out.maps(),
            out.height(),
            out.width(),
            out.spike_count()
        );
    }
    let readout = outputs.last().expect("network has layers");
    let decision = decide(readout, net.groups)?;
    println!(
        "label {} predicted {} (neuron {}, {})",
        test.label(index),
        decision.class_label,
        decision.winning_neuron,
        if decision.fired { "spiked" } else { "by potential" }
    );
    Ok(())
}
