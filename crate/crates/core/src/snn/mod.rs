//! Convolutional network of non-leaky integrate-and-fire neurons.
//!
//! Neurons fire at most once per stimulus: at the first time bin where the
//! accumulated potential reaches the layer threshold. Conv layers are
//! followed by spike pooling; the last conv layer is read out by [`decide`].

mod decision;
mod forward;
mod inhibition;

pub use decision::{decide, prune_smallest, Decision};
pub use forward::{conv_forward, forward, forward_layers, pool_forward, LayerOutput, LayerOutputs};
pub use inhibition::{lateral_inhibit, pointwise_inhibit, select_winners, Winner};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::encoding::EncoderConfig;
use crate::error::{Error, Result};

pub const W_MIN: f64 = 0.2;
pub const W_MAX: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    Pool,
}

/// How a pooling window chooses what to propagate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolMode {
    /// Earliest spike in the window.
    #[default]
    Spike,
    /// Spike time of the neuron with the largest potential in the window.
    Potential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_maps: usize,
    pub kernel: usize,
    pub stride: usize,
    /// Firing threshold; `None` means the layer never fires by threshold and
    /// is read out through its potentials.
    #[serde(default)]
    pub threshold: Option<f64>,
    #[serde(default)]
    pub inhibition_radius: usize,
    /// Keep only the strongest map's spike at every location (conv only).
    #[serde(default)]
    pub pointwise_inhibition: bool,
    #[serde(default = "one")]
    pub kwta: usize,
    #[serde(default)]
    pub pool_mode: PoolMode,
}

fn one() -> usize {
    1
}

impl LayerSpec {
    pub fn conv(
        name: &str,
        in_channels: usize,
        out_maps: usize,
        kernel: usize,
        threshold: Option<f64>,
        kwta: usize,
    ) -> Self {
        Self {
            name: name.to_string(),
            kind: LayerKind::Conv,
            in_channels,
            out_maps,
            kernel,
            stride: 1,
            threshold,
            inhibition_radius: 0,
            pointwise_inhibition: false,
            kwta,
            pool_mode: PoolMode::Spike,
        }
    }

    pub fn pool(name: &str, channels: usize, kernel: usize, stride: usize) -> Self {
        Self {
            name: name.to_string(),
            kind: LayerKind::Pool,
            in_channels: channels,
            out_maps: channels,
            kernel,
            stride,
            threshold: None,
            inhibition_radius: 0,
            pointwise_inhibition: false,
            kwta: 1,
            pool_mode: PoolMode::Spike,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.stride == 0 {
            return Err(Error::Config(format!(
                "layer {}: kernel and stride must be >= 1",
                self.name
            )));
        }
        if self.kind == LayerKind::Conv && self.kwta == 0 {
            return Err(Error::Config(format!("layer {}: kwta must be >= 1", self.name)));
        }
        if self.kind == LayerKind::Pool && self.in_channels != self.out_maps {
            return Err(Error::Config(format!(
                "pool layer {} cannot change the channel count",
                self.name
            )));
        }
        if let Some(t) = self.threshold {
            if t.is_nan() {
                return Err(Error::Config(format!("layer {}: NaN threshold", self.name)));
            }
        }
        Ok(())
    }

    pub fn output_size(&self, height: usize, width: usize) -> Option<(usize, usize)> {
        (height >= self.kernel && width >= self.kernel).then(|| {
            (
                (height - self.kernel) / self.stride + 1,
                (width - self.kernel) / self.stride + 1,
            )
        })
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }
}

/// Class readout of the last layer: `classes` groups of `per_group` neurons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputGroups {
    pub classes: usize,
    pub per_group: usize,
}

impl Default for OutputGroups {
    fn default() -> Self {
        Self {
            classes: 10,
            per_group: 20,
        }
    }
}

/// Shared-kernel weights of one conv layer, laid out `map x channel x ky x kx`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTensor {
    pub out_maps: usize,
    pub in_channels: usize,
    pub kernel: usize,
    pub data: Vec<f64>,
}

impl WeightTensor {
    pub fn filled(out_maps: usize, in_channels: usize, kernel: usize, value: f64) -> Self {
        Self {
            out_maps,
            in_channels,
            kernel,
            data: vec![value; out_maps * in_channels * kernel * kernel],
        }
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    #[inline]
    pub fn index(&self, m: usize, c: usize, ky: usize, kx: usize) -> usize {
        ((m * self.in_channels + c) * self.kernel + ky) * self.kernel + kx
    }

    pub fn map(&self, m: usize) -> &[f64] {
        let f = self.fan_in();
        &self.data[m * f..(m + 1) * f]
    }

    pub fn map_mut(&mut self, m: usize) -> &mut [f64] {
        let f = self.fan_in();
        &mut self.data[m * f..(m + 1) * f]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// How initial draws outside `[w_min, w_max]` are brought inside.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitBounds {
    /// Redraw until the value lies strictly inside the range.
    #[default]
    Resample,
    /// Clamp to the nearest bound.
    Clip,
}

/// Weight initialization for fresh conv layers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightInit {
    pub mean: f64,
    pub std: f64,
    #[serde(default)]
    pub bounds: InitBounds,
}

impl Default for WeightInit {
    fn default() -> Self {
        Self {
            mean: 0.8,
            std: 0.05,
            bounds: InitBounds::Resample,
        }
    }
}

impl WeightInit {
    /// Draws `N(mean, std)` per weight and brings it into `[w_min, w_max]`.
    ///
    /// A weight sitting exactly on a bound never moves under the stabilized
    /// rule, so clipping a mean-0.8 normal freezes about half of the layer.
    pub fn sample<R: Rng + ?Sized>(&self, tensor: &mut WeightTensor, rng: &mut R) {
        let normal = Normal::new(self.mean, self.std).expect("valid normal");
        let inside = self.std > 0.0 && self.mean > W_MIN - 3.0 * self.std && self.mean < W_MAX + 3.0 * self.std;
        for w in &mut tensor.data {
            *w = match self.bounds {
                InitBounds::Resample if inside => loop {
                    let v = normal.sample(rng);
                    if v > W_MIN && v < W_MAX {
                        break v;
                    }
                },
                _ => normal.sample(rng).clamp(W_MIN, W_MAX),
            };
        }
    }
}

/// Layer stack and weights. `weights[i]` is `Some` exactly for conv layers.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub input_channels: usize,
    pub input_height: usize,
    pub input_width: usize,
    pub layers: Vec<LayerSpec>,
    pub weights: Vec<Option<WeightTensor>>,
    pub groups: OutputGroups,
}

/// Default S1-C1-S2-C2-S3 stack for 28x28 inputs.
pub fn default_layers() -> Vec<LayerSpec> {
    vec![
        LayerSpec {
            inhibition_radius: 3,
            pointwise_inhibition: true,
            ..LayerSpec::conv("S1", 6, 30, 5, Some(15.0), 5)
        },
        LayerSpec::pool("C1", 30, 2, 2),
        LayerSpec {
            inhibition_radius: 1,
            pointwise_inhibition: true,
            ..LayerSpec::conv("S2", 30, 250, 5, Some(10.0), 8)
        },
        LayerSpec::pool("C2", 250, 2, 2),
        LayerSpec::conv("S3", 250, 200, 4, None, 1),
    ]
}

impl NetworkState {
    /// Builds a network and initializes every conv layer with `init`.
    pub fn new<R: Rng + ?Sized>(
        encoder: &EncoderConfig,
        image_size: (usize, usize),
        layers: Vec<LayerSpec>,
        groups: OutputGroups,
        init: WeightInit,
        rng: &mut R,
    ) -> Result<Self> {
        let (h, w) = encoder
            .output_size(image_size.0, image_size.1)
            .ok_or_else(|| Error::Config("image smaller than the DoG window".into()))?;
        let mut net = Self::with_constant_weights(encoder.channels(), h, w, layers, groups, W_MIN)?;
        for t in net.weights.iter_mut().flatten() {
            init.sample(t, rng);
        }
        Ok(net)
    }

    pub fn with_constant_weights(
        input_channels: usize,
        input_height: usize,
        input_width: usize,
        layers: Vec<LayerSpec>,
        groups: OutputGroups,
        value: f64,
    ) -> Result<Self> {
        let weights = layers
            .iter()
            .map(|l| {
                (l.kind == LayerKind::Conv)
                    .then(|| WeightTensor::filled(l.out_maps, l.in_channels, l.kernel, value))
            })
            .collect();
        let net = Self {
            input_channels,
            input_height,
            input_width,
            layers,
            weights,
            groups,
        };
        net.validate()?;
        Ok(net)
    }

    /// Checks that consecutive layers fit together and the readout matches.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config("network has no layers".into()));
        }
        let (mut c, mut h, mut w) = (self.input_channels, self.input_height, self.input_width);
        for (i, l) in self.layers.iter().enumerate() {
            l.validate()?;
            if l.in_channels != c {
                return Err(Error::Config(format!(
                    "layer {} expects {} channels, previous layer provides {}",
                    l.name, l.in_channels, c
                )));
            }
            let (oh, ow) = l.output_size(h, w).ok_or_else(|| {
                Error::Config(format!("layer {} kernel {} exceeds input {h}x{w}", l.name, l.kernel))
            })?;
            match (&self.weights[i], l.kind) {
                (Some(t), LayerKind::Conv) => {
                    if t.out_maps != l.out_maps || t.in_channels != l.in_channels || t.kernel != l.kernel {
                        return Err(Error::Config(format!("layer {} weight shape mismatch", l.name)));
                    }
                }
                (None, LayerKind::Pool) => {}
                _ => return Err(Error::Config(format!("layer {} weights do not match its kind", l.name))),
            }
            c = l.out_maps;
            h = oh;
            w = ow;
        }
        let last = self.layers.last().unwrap();
        if last.kind != LayerKind::Conv {
            return Err(Error::Config("the last layer must be a conv layer".into()));
        }
        if last.out_maps * h * w != self.groups.classes * self.groups.per_group {
            return Err(Error::Config(format!(
                "readout has {} neurons but {} classes x {} per group were configured",
                last.out_maps * h * w,
                self.groups.classes,
                self.groups.per_group
            )));
        }
        Ok(())
    }

    /// Indices of the conv layers in order (S1, S2, S3 for the default stack).
    pub fn conv_layers(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.kind == LayerKind::Conv)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn output_layer(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn weights(&self, layer: usize) -> &WeightTensor {
        self.weights[layer].as_ref().expect("conv layer")
    }

    pub fn weights_mut(&mut self, layer: usize) -> &mut WeightTensor {
        self.weights[layer].as_mut().expect("conv layer")
    }

    /// Spatial input size of every layer.
    pub fn layer_input_sizes(&self) -> Vec<(usize, usize, usize)> {
        let mut sizes = Vec::with_capacity(self.layers.len());
        let (mut c, mut h, mut w) = (self.input_channels, self.input_height, self.input_width);
        for l in &self.layers {
            sizes.push((c, h, w));
            let (oh, ow) = l.output_size(h, w).expect("validated");
            c = l.out_maps;
            h = oh;
            w = ow;
        }
        sizes
    }

    pub fn set_inhibition_radii(&mut self, radii: &[usize]) {
        for (layer, &r) in self.conv_layers().into_iter().zip(radii) {
            self.layers[layer].inhibition_radius = r;
        }
    }

    pub fn reinitialize_layer<R: Rng + ?Sized>(&mut self, layer: usize, init: WeightInit, rng: &mut R) {
        init.sample(self.weights_mut(layer), rng);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_stack_reads_out_200_neurons() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = NetworkState::new(
            &EncoderConfig::default(),
            (28, 28),
            default_layers(),
            OutputGroups::default(),
            WeightInit::default(),
            &mut rng,
        )
        .unwrap();
        let sizes = net.layer_input_sizes();
        assert_eq!(sizes[0], (6, 28, 28));
        assert_eq!(sizes[2], (30, 12, 12));
        assert_eq!(sizes[4], (250, 4, 4));
        assert_eq!(net.conv_layers(), vec![0, 2, 4]);
        assert_eq!(net.weights(4).out_maps, 200);
        for t in net.weights.iter().flatten() {
            assert!(t.data.iter().all(|w| (W_MIN..=W_MAX).contains(w)));
        }
    }

    #[test]
    fn readout_mismatch_rejected() {
        let layers = vec![LayerSpec::conv("S", 2, 7, 1, None, 1)];
        assert!(NetworkState::with_constant_weights(2, 1, 1, layers, OutputGroups::default(), 0.5).is_err());
    }

    #[test]
    fn channel_mismatch_rejected() {
        let layers = vec![
            LayerSpec::conv("S1", 3, 4, 1, Some(1.0), 1),
            LayerSpec::conv("S2", 5, 200, 1, None, 1),
        ];
        assert!(NetworkState::with_constant_weights(3, 1, 1, layers, OutputGroups::default(), 0.5).is_err());
    }
}
