use std::ops::Range;

use super::{pointwise_inhibit, LayerKind, LayerSpec, NetworkState, PoolMode, WeightTensor};
use crate::encoding::{SpikeTime, SpikeWave, NEVER};
use crate::error::{Error, Result};

/// Spikes and final potentials of one layer for one stimulus.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerOutput {
    /// First (and only) spike time of every neuron, `map x y x x`.
    pub spikes: SpikeWave,
    /// Potential at the spike time for neurons that fired, otherwise the
    /// potential accumulated over the whole stimulus.
    pub potential: Vec<f64>,
}

impl LayerOutput {
    pub fn maps(&self) -> usize {
        self.spikes.channels
    }

    pub fn height(&self) -> usize {
        self.spikes.height
    }

    pub fn width(&self) -> usize {
        self.spikes.width
    }

    pub fn len(&self) -> usize {
        self.potential.len()
    }

    pub fn is_empty(&self) -> bool {
        self.potential.is_empty()
    }

    #[inline]
    pub fn first_spike(&self, i: usize) -> SpikeTime {
        self.spikes.latency[i]
    }

    pub fn spike_count(&self) -> usize {
        self.spikes.spike_count()
    }
}

pub type LayerOutputs = Vec<LayerOutput>;

/// Integrate-and-fire pass of one conv layer (no inhibition).
///
/// Every output neuron accumulates, bin by bin, the weights of the input
/// spikes inside its receptive field. It fires at the first bin where the
/// potential reaches the threshold and never again, keeping the potential it
/// fired with. Silent neurons integrate until the end of the stimulus.
pub fn conv_forward(input: &SpikeWave, weights: &WeightTensor, spec: &LayerSpec) -> Result<LayerOutput> {
    if spec.kind != LayerKind::Conv {
        return Err(Error::Config(format!("{} is not a conv layer", spec.name)));
    }
    if input.channels != spec.in_channels || weights.in_channels != spec.in_channels {
        return Err(Error::Shape {
            expected: format!("{} input channels", spec.in_channels),
            actual: format!("{}", input.channels),
        });
    }
    let (oh, ow) = spec.output_size(input.height, input.width).ok_or_else(|| Error::Shape {
        expected: format!("input at least {}x{}", spec.kernel, spec.kernel),
        actual: format!("{}x{}", input.height, input.width),
    })?;
    let maps = spec.out_maps;
    let k = spec.kernel;
    let t_bins = input.time_bins;
    let fan_in = weights.fan_in();

    let mut latency = vec![NEVER; maps * oh * ow];
    let mut potential = vec![0.0; maps * oh * ow];
    let mut events: Vec<(u32, SpikeTime)> = Vec::with_capacity(fan_in);
    let mut sorted: Vec<u32> = Vec::with_capacity(fan_in);
    let mut starts = vec![0usize; t_bins + 1];

    for oy in 0..oh {
        for ox in 0..ow {
            events.clear();
            for c in 0..spec.in_channels {
                for ky in 0..k {
                    let row = input.index(c, oy * spec.stride + ky, ox * spec.stride);
                    for kx in 0..k {
                        let t = input.latency[row + kx];
                        if t != NEVER {
                            events.push((((c * k + ky) * k + kx) as u32, t));
                        }
                    }
                }
            }
            if events.is_empty() {
                continue;
            }
            let pos = oy * ow + ox;
            match spec.threshold {
                None => {
                    for m in 0..maps {
                        let w = &weights.data[m * fan_in..(m + 1) * fan_in];
                        potential[m * oh * ow + pos] = events.iter().map(|&(i, _)| w[i as usize]).sum();
                    }
                }
                Some(threshold) => {
                    // counting sort by spike time
                    starts.iter_mut().for_each(|s| *s = 0);
                    for &(_, t) in &events {
                        starts[usize::from(t) + 1] += 1;
                    }
                    for t in 0..t_bins {
                        starts[t + 1] += starts[t];
                    }
                    sorted.clear();
                    sorted.resize(events.len(), 0);
                    let mut fill = starts.clone();
                    for &(i, t) in &events {
                        sorted[fill[usize::from(t)]] = i;
                        fill[usize::from(t)] += 1;
                    }
                    for m in 0..maps {
                        let w = &weights.data[m * fan_in..(m + 1) * fan_in];
                        let mut acc = 0.0;
                        let mut fired = NEVER;
                        for t in 0..t_bins {
                            let group = &sorted[starts[t]..starts[t + 1]];
                            if group.is_empty() {
                                continue;
                            }
                            acc += group.iter().map(|&i| w[i as usize]).sum::<f64>();
                            if acc >= threshold {
                                fired = t as SpikeTime;
                                break;
                            }
                        }
                        potential[m * oh * ow + pos] = acc;
                        latency[m * oh * ow + pos] = fired;
                    }
                }
            }
        }
    }
    Ok(LayerOutput {
        spikes: SpikeWave {
            time_bins: t_bins,
            channels: maps,
            height: oh,
            width: ow,
            latency,
        },
        potential,
    })
}

/// Pooling over `kernel x kernel` windows with the layer stride.
pub fn pool_forward(input: &LayerOutput, spec: &LayerSpec) -> Result<LayerOutput> {
    if spec.kind != LayerKind::Pool {
        return Err(Error::Config(format!("{} is not a pool layer", spec.name)));
    }
    let src = &input.spikes;
    if src.channels != spec.in_channels {
        return Err(Error::Shape {
            expected: format!("{} channels", spec.in_channels),
            actual: format!("{}", src.channels),
        });
    }
    let (oh, ow) = spec.output_size(src.height, src.width).ok_or_else(|| Error::Shape {
        expected: format!("input at least {}x{}", spec.kernel, spec.kernel),
        actual: format!("{}x{}", src.height, src.width),
    })?;
    let mut latency = vec![NEVER; src.channels * oh * ow];
    let mut potential = vec![0.0; src.channels * oh * ow];
    for c in 0..src.channels {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best_t = NEVER;
                let mut best_p = f64::NEG_INFINITY;
                for ky in 0..spec.kernel {
                    for kx in 0..spec.kernel {
                        let i = src.index(c, oy * spec.stride + ky, ox * spec.stride + kx);
                        let (t, p) = (src.latency[i], input.potential[i]);
                        let better = match spec.pool_mode {
                            PoolMode::Spike => t < best_t || (t == best_t && p > best_p),
                            PoolMode::Potential => p > best_p || (p == best_p && t < best_t),
                        };
                        if better {
                            best_t = t;
                            best_p = p;
                        }
                    }
                }
                let o = (c * oh + oy) * ow + ox;
                latency[o] = best_t;
                potential[o] = best_p;
            }
        }
    }
    Ok(LayerOutput {
        spikes: SpikeWave {
            time_bins: src.time_bins,
            channels: src.channels,
            height: oh,
            width: ow,
            latency,
        },
        potential,
    })
}

/// Runs layers `range` of `net` on `input`, which must be the spike wave
/// feeding `range.start`. Conv layers flagged for pointwise inhibition keep
/// one spike per location; the radius-based lateral inhibition is a
/// learning-time mechanism and is not applied here.
pub fn forward_layers(input: &SpikeWave, net: &NetworkState, range: Range<usize>) -> Result<LayerOutputs> {
    let mut outputs: LayerOutputs = Vec::with_capacity(range.len());
    for layer in range {
        let spec = &net.layers[layer];
        let src = outputs.last().map(|o| &o.spikes).unwrap_or(input);
        let out = match spec.kind {
            LayerKind::Conv => {
                let out = conv_forward(src, net.weights(layer), spec)?;
                if spec.pointwise_inhibition {
                    pointwise_inhibit(&out)
                } else {
                    out
                }
            }
            LayerKind::Pool => {
                let prev = outputs.last().ok_or_else(|| {
                    Error::Config(format!("pool layer {} cannot take the raw input", spec.name))
                })?;
                pool_forward(prev, spec)?
            }
        };
        outputs.push(out);
    }
    Ok(outputs)
}

/// Propagates an encoded stimulus through every layer.
pub fn forward(input: &SpikeWave, net: &NetworkState) -> Result<LayerOutputs> {
    if (input.channels, input.height, input.width) != (net.input_channels, net.input_height, net.input_width) {
        return Err(Error::Shape {
            expected: format!("{}x{}x{}", net.input_channels, net.input_height, net.input_width),
            actual: format!("{}x{}x{}", input.channels, input.height, input.width),
        });
    }
    forward_layers(input, net, 0..net.layers.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::snn::OutputGroups;

    fn single_neuron_net(threshold: Option<f64>, w: f64) -> (NetworkState, LayerSpec) {
        let spec = LayerSpec::conv("S", 1, 1, 1, threshold, 1);
        let groups = OutputGroups {
            classes: 1,
            per_group: 1,
        };
        let net = NetworkState::with_constant_weights(1, 1, 1, vec![spec.clone()], groups, w).unwrap();
        (net, spec)
    }

    #[test]
    fn scalar_accumulation() {
        let (net, _) = single_neuron_net(Some(0.5), 0.8);
        let input = SpikeWave::from_latency(3, 1, 1, 1, vec![0]).unwrap();
        let out = forward(&input, &net).unwrap();
        assert_eq!(out[0].first_spike(0), 0);
        assert!((out[0].potential[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn infinite_threshold_never_fires() {
        let spec = LayerSpec::conv("S", 2, 3, 2, Some(f64::INFINITY), 1);
        let mut w = WeightTensor::filled(3, 2, 2, 0.0);
        for (i, v) in w.data.iter_mut().enumerate() {
            *v = 0.2 + 0.01 * i as f64;
        }
        let input = SpikeWave::from_latency(4, 2, 2, 2, vec![0, 1, NEVER, 3, 2, NEVER, 0, 1]).unwrap();
        let out = conv_forward(&input, &w, &spec).unwrap();
        assert_eq!(out.spike_count(), 0);
        for m in 0..3 {
            let want: f64 = (0..8)
                .filter(|&i| input.latency[i] != NEVER)
                .map(|i| w.map(m)[i])
                .sum();
            assert!((out.potential[m] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let (net, _) = single_neuron_net(Some(0.5), 0.8);
        let input = SpikeWave::silent(3, 2, 1, 1);
        assert!(matches!(forward(&input, &net), Err(Error::Shape { .. })));
    }

    #[test]
    fn spike_pool_takes_earliest() {
        let spec = LayerSpec::pool("C", 1, 2, 2);
        let out = LayerOutput {
            spikes: SpikeWave::from_latency(5, 1, 2, 2, vec![3, NEVER, 1, 4]).unwrap(),
            potential: vec![1.0, 2.0, 0.5, 9.0],
        };
        let pooled = pool_forward(&out, &spec).unwrap();
        assert_eq!(pooled.spikes.latency, vec![1]);

        let spec = LayerSpec {
            pool_mode: PoolMode::Potential,
            ..spec
        };
        let pooled = pool_forward(&out, &spec).unwrap();
        assert_eq!(pooled.spikes.latency, vec![4]);
    }
}
