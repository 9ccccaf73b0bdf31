//! Training loops shared by the experiment protocol and the continual-learning
//! methods: layer-wise STDP for the feature layers, R-STDP for the readout,
//! and cached intermediate spike waves so readout epochs skip the lower layers.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::data::Dataset;
use crate::encoding::{Encoder, SpikeWave};
use crate::error::{Error, Result};
use crate::plasticity::{
    lr_step, reward_signal, update_batch_stats, update_winner, BatchStats, FreezeMask, LRSchedule, NoiseConfig,
    PlasticityParams, RewardMode, SynapseBounds, UpdateContext,
};
use crate::snn::{
    conv_forward, decide, forward_layers, lateral_inhibit, pointwise_inhibit, select_winners, LayerKind, NetworkState,
};

/// Encodes every image of `ds`.
pub fn encode_dataset(encoder: &Encoder, ds: &Dataset) -> Result<Vec<SpikeWave>> {
    (0..ds.len()).into_par_iter().map(|i| encoder.encode(&ds.image(i))).collect()
}

/// Spike waves entering layer `layer` for every encoded input.
pub fn layer_inputs(net: &NetworkState, inputs: &[SpikeWave], layer: usize) -> Result<Vec<SpikeWave>> {
    if layer == 0 {
        return Ok(inputs.to_vec());
    }
    inputs
        .par_iter()
        .map(|x| {
            let mut outs = forward_layers(x, net, 0..layer)?;
            Ok(outs.pop().expect("at least one layer").spikes)
        })
        .collect()
}

/// Spike waves entering the readout layer.
pub fn readout_features(net: &NetworkState, inputs: &[SpikeWave]) -> Result<Vec<SpikeWave>> {
    layer_inputs(net, inputs, net.output_layer())
}

/// Learning-rate state of one STDP-trained feature layer.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureLearning {
    pub params: PlasticityParams,
    pub schedule: LRSchedule,
}

/// Unsupervised STDP on conv layer `layer` for `epochs` passes over
/// `inputs`, which must already be the spike waves entering that layer.
/// Each stimulus updates the kernels of up to `kwta` winners.
pub fn train_feature_layer<R: Rng + ?Sized>(
    net: &mut NetworkState,
    layer: usize,
    inputs: &[SpikeWave],
    epochs: usize,
    learning: &mut FeatureLearning,
    rng: &mut R,
) -> Result<()> {
    let spec = net.layers[layer].clone();
    if spec.kind != LayerKind::Conv {
        return Err(Error::Config(format!("layer {} is not trainable", spec.name)));
    }
    if epochs > 0 && inputs.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    let stats = BatchStats::chance(1);
    let noise = NoiseConfig::disabled();
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    for _ in 0..epochs {
        order.shuffle(rng);
        for &i in &order {
            let x = &inputs[i];
            let mut out = conv_forward(x, net.weights(layer), &spec)?;
            if spec.pointwise_inhibition {
                out = pointwise_inhibit(&out);
            }
            let out = lateral_inhibit(&out, spec.inhibition_radius);
            let winners = select_winners(&out, spec.kwta, spec.inhibition_radius);
            let ctx = UpdateContext {
                mode: RewardMode::Stdp,
                stats: &stats,
                params: &learning.params,
                noise: &noise,
                mask: None,
                bounds: None,
            };
            let weights = net.weights_mut(layer);
            for w in winners.iter().filter(|w| w.fired()) {
                update_winner(weights, x, spec.stride, w, &ctx, rng);
            }
            learning.params = lr_step(&mut learning.schedule, &learning.params);
        }
    }
    Ok(())
}

/// Reward-modulated training state of the readout layer.
pub struct ReadoutLearning<'a> {
    pub params: PlasticityParams,
    pub stats: BatchStats,
    /// Samples per hit/miss batch; 0 closes a batch at the end of every epoch.
    pub batch_size: usize,
    pub noise: NoiseConfig,
    pub mask: Option<&'a FreezeMask>,
    pub bounds: Option<&'a dyn SynapseBounds>,
    outcomes: Vec<bool>,
}

impl<'a> ReadoutLearning<'a> {
    pub fn new(params: PlasticityParams, stats: BatchStats, batch_size: usize) -> Self {
        Self {
            params,
            stats,
            batch_size,
            noise: NoiseConfig::disabled(),
            mask: None,
            bounds: None,
            outcomes: Vec::new(),
        }
    }

    /// One R-STDP step on `feature` (the spike wave entering the readout).
    /// Returns whether the pre-update decision was correct.
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        net: &mut NetworkState,
        feature: &SpikeWave,
        label: u8,
        rng: &mut R,
    ) -> Result<bool> {
        let layer = net.output_layer();
        let spec = &net.layers[layer];
        let stride = spec.stride;
        let out = conv_forward(feature, net.weights(layer), spec)?;
        let decision = decide(&out, net.groups)?;
        let mode = reward_signal(&decision, usize::from(label));
        let winner = select_winners(&out, 1, 0)[0];
        let ctx = UpdateContext {
            mode,
            stats: &self.stats,
            params: &self.params,
            noise: &self.noise,
            mask: self.mask,
            bounds: self.bounds,
        };
        let weights = net.weights_mut(layer);
        update_winner(weights, feature, stride, &winner, &ctx, rng);
        if let Some(b) = self.bounds {
            let f = weights.fan_in();
            let base = winner.map * f;
            for (k, &w) in weights.data[base..base + f].iter().enumerate() {
                let (lo, hi) = b.bounds(base + k);
                if w < lo || w > hi {
                    return Err(Error::InvalidInput(format!(
                        "weight {} left its permitted range [{lo}, {hi}]: {w}",
                        base + k
                    )));
                }
            }
        }
        let correct = mode == RewardMode::Reward;
        self.outcomes.push(correct);
        if self.outcomes.len() == self.batch_size {
            self.close_batch()?;
        }
        Ok(correct)
    }

    /// Closes a per-epoch batch. A no-op for fixed-size batches.
    pub fn end_epoch(&mut self) -> Result<()> {
        if self.batch_size == 0 && !self.outcomes.is_empty() {
            self.close_batch()?;
        }
        Ok(())
    }

    fn close_batch(&mut self) -> Result<()> {
        self.stats = update_batch_stats(&self.outcomes)?;
        self.outcomes.clear();
        Ok(())
    }

    /// One shuffled pass over `features`; returns the training accuracy.
    pub fn epoch<R: Rng + ?Sized>(
        &mut self,
        net: &mut NetworkState,
        features: &[SpikeWave],
        labels: &[u8],
        rng: &mut R,
    ) -> Result<f64> {
        if features.is_empty() {
            return Err(Error::InvalidInput("empty training set".into()));
        }
        let mut order: Vec<usize> = (0..features.len()).collect();
        order.shuffle(rng);
        let mut hits = 0usize;
        for &i in &order {
            hits += usize::from(self.step(net, &features[i], labels[i], rng)?);
        }
        self.end_epoch()?;
        Ok(hits as f64 / features.len() as f64)
    }
}

/// Decisions of the readout for every cached feature wave.
pub fn predict_features(net: &NetworkState, features: &[SpikeWave]) -> Result<Vec<usize>> {
    let layer = net.output_layer();
    let spec = &net.layers[layer];
    features
        .par_iter()
        .map(|f| {
            let out = conv_forward(f, net.weights(layer), spec)?;
            Ok(decide(&out, net.groups)?.class_label)
        })
        .collect()
}

/// Fraction of cached feature waves classified as their label.
pub fn accuracy_features(net: &NetworkState, features: &[SpikeWave], labels: &[u8]) -> Result<f64> {
    if features.is_empty() {
        return Err(Error::InvalidInput("cannot evaluate on an empty dataset".into()));
    }
    let predictions = predict_features(net, features)?;
    let hits = predictions
        .iter()
        .zip(labels)
        .filter(|(&p, &l)| p == usize::from(l))
        .count();
    Ok(hits as f64 / features.len() as f64)
}

/// Adds `sigma * N(0, 1)` to every weight of `layer` and clamps to `[lo, hi]`.
pub fn diffuse_layer<R: Rng + ?Sized>(net: &mut NetworkState, layer: usize, sigma: f64, lo: f64, hi: f64, rng: &mut R) {
    if sigma == 0.0 {
        return;
    }
    for w in &mut net.weights_mut(layer).data {
        let z: f64 = StandardNormal.sample(rng);
        *w = (*w + sigma * z).clamp(lo, hi);
    }
}
