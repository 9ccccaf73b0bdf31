//! Plain STDP, reward and punishment updates on a single synapse.
//!
//! cargo run --release --example stdp_rules

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spiking_continual::plasticity::{
    apply_update, lr_step, stdp_delta, update_batch_stats, LRSchedule, NoiseConfig, PlasticityParams, RewardMode,
};

fn main() -> spiking_continual::Result<()> {
    let params = PlasticityParams::default();
    let stats = update_batch_stats(&[true, true, true, false])?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    println!("phi_r {:.2} phi_p {:.2}", stats.phi_r, stats.phi_p);

    for mode in [RewardMode::Stdp, RewardMode::Reward, RewardMode::Punishment] {
        let causal = stdp_delta(true, mode, &stats, &params, &NoiseConfig::disabled(), &mut rng);
        let anti = stdp_delta(false, mode, &stats, &params, &NoiseConfig::disabled(), &mut rng);
        println!("{mode:?}: causal {causal:+.5}, anti-causal {anti:+.5}");
    }

    let mut w = 0.5;
    let mut trace = Vec::new();
    for _ in 0..2000 {
        let d = stdp_delta(true, RewardMode::Stdp, &stats, &params, &NoiseConfig::disabled(), &mut rng);
        w = apply_update(w, d, &params, false, None);
        trace.push(w);
    }
    println!(
        "repeated potentiation from 0.5: {:.4} after 10, {:.4} after 100, {:.4} after 2000",
        trace[9], trace[99], trace[1999]
    );

    let noise = NoiseConfig::relative_to(&params, 0.5);
    let noisy: Vec<f64> = (0..5)
        .map(|_| stdp_delta(true, RewardMode::Stdp, &stats, &params, &noise, &mut rng))
        .collect();
    println!("noisy causal deltas: {noisy:.5?}");

    let mut schedule = LRSchedule {
        period: 1,
        ..LRSchedule::default()
    };
    let mut p = params;
    for step in 1..=7 {
        p = lr_step(&mut schedule, &p);
        println!("schedule step {step}: a+ {:.4} a- {:.4}", p.a_r_plus, p.a_r_minus);
    }
    Ok(())
}
