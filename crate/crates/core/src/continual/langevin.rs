use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::encoding::{Encoder, SpikeWave};
use crate::error::{Error, Result};
use crate::plasticity::{BatchStats, PlasticityParams, SynapseBounds};
use crate::snn::{NetworkState, WeightTensor};
use crate::stats::quantile_sorted;
use crate::training::{accuracy_features, diffuse_layer, encode_dataset, readout_features, ReadoutLearning};

/// Storage precision of Langevin snapshots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F64,
    F32,
}

impl Precision {
    pub fn bytes(self) -> usize {
        match self {
            Precision::F64 => 8,
            Precision::F32 => 4,
        }
    }
}

/// Brownian exploration of the readout weights around a trained optimum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LangevinConfig {
    /// Noise added to every readout weight after each learning step.
    pub sigma: f64,
    /// Sampling budget in epochs over the old task.
    pub n_epochs_max: usize,
    /// Learning steps between stored snapshots.
    pub n_demix: usize,
    /// Sampling stops once held-out accuracy falls below this.
    pub a_min: f64,
    /// Steps between accuracy checks; 0 checks once per epoch.
    pub eval_cadence: usize,
    /// Held-out samples per class used for the accuracy check.
    pub eval_per_class: usize,
    pub precision: Precision,
}

impl Default for LangevinConfig {
    fn default() -> Self {
        Self {
            sigma: 4e-4,
            n_epochs_max: 25,
            n_demix: 2400,
            a_min: 0.80,
            eval_cadence: 0,
            eval_per_class: 100,
            precision: Precision::F64,
        }
    }
}

impl LangevinConfig {
    /// Shorter, noisier sampling for a tenth of the data: the noise is scaled
    /// so the weights still diffuse over a good part of `[w_min, w_max]`.
    pub fn desk() -> Self {
        Self {
            sigma: 2e-3,
            n_epochs_max: 10,
            n_demix: 240,
            a_min: 0.60,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0) || self.n_demix == 0 || !(self.a_min > 0.0 && self.a_min < 1.0) {
            return Err(Error::Config(format!(
                "langevin needs sigma >= 0, n_demix >= 1 and a_min in (0, 1); got {}, {}, {}",
                self.sigma, self.n_demix, self.a_min
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Values {
    F64(Vec<f64>),
    F32(Vec<f32>),
}

/// Ordered snapshots of the readout weights along a Langevin trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleStore {
    pub out_maps: usize,
    pub in_channels: usize,
    pub kernel: usize,
    pub n_demix: usize,
    pub step_indices: Vec<u64>,
    values: Values,
}

impl SampleStore {
    pub fn new(shape: &WeightTensor, n_demix: usize, precision: Precision) -> Self {
        Self {
            out_maps: shape.out_maps,
            in_channels: shape.in_channels,
            kernel: shape.kernel,
            n_demix,
            step_indices: Vec::new(),
            values: match precision {
                Precision::F64 => Values::F64(Vec::new()),
                Precision::F32 => Values::F32(Vec::new()),
            },
        }
    }

    pub fn precision(&self) -> Precision {
        match self.values {
            Values::F64(_) => Precision::F64,
            Values::F32(_) => Precision::F32,
        }
    }

    /// Synapses per snapshot.
    pub fn synapses(&self) -> usize {
        self.out_maps * self.in_channels * self.kernel * self.kernel
    }

    pub fn len(&self) -> usize {
        self.step_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.step_indices.is_empty()
    }

    pub fn push(&mut self, step: u64, weights: &[f64]) -> Result<()> {
        if weights.len() != self.synapses() {
            return Err(Error::Shape {
                expected: format!("{} weights", self.synapses()),
                actual: format!("{}", weights.len()),
            });
        }
        self.step_indices.push(step);
        match &mut self.values {
            Values::F64(v) => v.extend_from_slice(weights),
            Values::F32(v) => v.extend(weights.iter().map(|&w| w as f32)),
        }
        Ok(())
    }

    /// Value of `synapse` in snapshot `snapshot`.
    #[inline]
    pub fn value(&self, snapshot: usize, synapse: usize) -> f64 {
        let i = snapshot * self.synapses() + synapse;
        match &self.values {
            Values::F64(v) => v[i],
            Values::F32(v) => f64::from(v[i]),
        }
    }

    pub fn snapshot(&self, snapshot: usize) -> Vec<f64> {
        (0..self.synapses()).map(|s| self.value(snapshot, s)).collect()
    }

    /// Drops every snapshot taken after `step`.
    pub fn truncate_after(&mut self, step: u64) {
        let keep = self.step_indices.iter().take_while(|&&s| s <= step).count();
        self.step_indices.truncate(keep);
        let n = keep * self.synapses();
        match &mut self.values {
            Values::F64(v) => v.truncate(n),
            Values::F32(v) => v.truncate(n),
        }
    }
}

/// Per-synapse permitted interval `[lower, upper]` for the readout weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightBoundsMap {
    pub out_maps: usize,
    pub in_channels: usize,
    pub kernel: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl WeightBoundsMap {
    /// Interval widths; a narrower interval marks a more important synapse.
    pub fn importance(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).collect()
    }

    /// Clamps every weight of `weights` into its interval.
    pub fn project(&self, weights: &mut WeightTensor) {
        for (w, (&l, &u)) in weights.data.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *w = w.clamp(l, u);
        }
    }

    pub fn contains(&self, weights: &WeightTensor) -> bool {
        weights
            .data
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(w, (l, u))| l <= w && w <= u)
    }
}

impl SynapseBounds for WeightBoundsMap {
    #[inline]
    fn bounds(&self, index: usize) -> (f64, f64) {
        (self.lower[index], self.upper[index])
    }
}

/// First and ninth deciles of every synapse across the stored snapshots,
/// linearly interpolated at position `q * (n - 1)` of the sorted values.
pub fn decile_bounds(store: &SampleStore) -> Result<WeightBoundsMap> {
    if store.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "decile bounds need at least 2 snapshots, got {}",
            store.len()
        )));
    }
    let n = store.len();
    let (lower, upper): (Vec<f64>, Vec<f64>) = (0..store.synapses())
        .into_par_iter()
        .map_init(
            || Vec::with_capacity(n),
            |buf, s| {
                buf.clear();
                buf.extend((0..n).map(|k| store.value(k, s)));
                buf.sort_by(f64::total_cmp);
                (quantile_sorted(buf, 0.1), quantile_sorted(buf, 0.9))
            },
        )
        .unzip();
    Ok(WeightBoundsMap {
        out_maps: store.out_maps,
        in_channels: store.in_channels,
        kernel: store.kernel,
        lower,
        upper,
    })
}

/// Result of a Langevin run.
#[derive(Debug, Clone, PartialEq)]
pub struct LangevinOutcome {
    pub store: SampleStore,
    pub steps: usize,
    /// `(step, held-out accuracy)` at every check.
    pub accuracy_trace: Vec<(usize, f64)>,
    pub terminated_early: bool,
    /// Readout weights at the end of the trajectory.
    pub final_weights: WeightTensor,
}

/// Langevin sampling on cached readout features.
///
/// Rate adaptation starts from `stats`. Every step is one R-STDP update on the next training sample followed by
/// `sigma * N(0, 1)` on every readout weight and a clamp to `[w_min, w_max]`.
/// A snapshot is stored every `n_demix` steps. Held-out accuracy is checked
/// every `eval_cadence` steps (or per epoch); when it drops below `a_min`,
/// sampling stops and snapshots taken after the last passing check are dropped.
#[allow(clippy::too_many_arguments)]
pub fn langevin_sample_features<R: Rng + ?Sized>(
    net: &NetworkState,
    train: (&[SpikeWave], &[u8]),
    heldout: (&[SpikeWave], &[u8]),
    params: &PlasticityParams,
    stats: BatchStats,
    batch_size: usize,
    cfg: &LangevinConfig,
    rng: &mut R,
) -> Result<LangevinOutcome> {
    cfg.validate()?;
    let (features, labels) = train;
    if features.is_empty() || heldout.0.is_empty() {
        return Err(Error::InvalidInput("langevin sampling needs non-empty data".into()));
    }
    let mut net = net.clone();
    let layer = net.output_layer();
    let cadence = if cfg.eval_cadence == 0 {
        features.len()
    } else {
        cfg.eval_cadence
    };
    let mut store = SampleStore::new(net.weights(layer), cfg.n_demix, cfg.precision);
    let start = accuracy_features(&net, heldout.0, heldout.1)?;
    let mut trace = vec![(0, start)];
    let mut learning = ReadoutLearning::new(*params, stats, batch_size);
    let mut steps = 0usize;
    let mut last_pass = 0u64;
    let mut terminated_early = false;

    'epochs: for _ in 0..cfg.n_epochs_max {
        let mut order: Vec<usize> = (0..features.len()).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), rng);
        for &i in &order {
            learning.step(&mut net, &features[i], labels[i], rng)?;
            diffuse_layer(&mut net, layer, cfg.sigma, params.w_min, params.w_max, rng);
            steps += 1;
            if steps % cfg.n_demix == 0 {
                store.push(steps as u64, &net.weights(layer).data)?;
            }
            if steps % cadence == 0 {
                let acc = accuracy_features(&net, heldout.0, heldout.1)?;
                trace.push((steps, acc));
                if acc < cfg.a_min {
                    terminated_early = true;
                    break 'epochs;
                }
                last_pass = steps as u64;
            }
        }
        learning.end_epoch()?;
    }
    if terminated_early {
        store.truncate_after(last_pass);
    }
    if store.is_empty() {
        return Err(Error::NoSnapshots {
            steps,
            n_demix: cfg.n_demix,
            accuracy: trace.last().map_or(f64::NAN, |t| t.1),
        });
    }
    Ok(LangevinOutcome {
        store,
        steps,
        accuracy_trace: trace,
        terminated_early,
        final_weights: net.weights(layer).clone(),
    })
}

/// Encodes `task` and `heldout` and runs [`langevin_sample_features`].
pub fn langevin_sample<R: Rng + ?Sized>(
    net: &NetworkState,
    encoder: &Encoder,
    task: &Dataset,
    heldout: &Dataset,
    params: &PlasticityParams,
    cfg: &LangevinConfig,
    rng: &mut R,
) -> Result<SampleStore> {
    if task.is_empty() {
        return Err(Error::InvalidInput("langevin sampling needs a non-empty dataset".into()));
    }
    let train = readout_features(net, &encode_dataset(encoder, task)?)?;
    let held = readout_features(net, &encode_dataset(encoder, heldout)?)?;
    let outcome = langevin_sample_features(
        net,
        (&train, &task.labels),
        (&held, &heldout.labels),
        params,
        BatchStats::chance(net.groups.classes),
        0,
        cfg,
        rng,
    )?;
    Ok(outcome.store)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_of(values: &[&[f64]]) -> SampleStore {
        let shape = WeightTensor::filled(1, 1, 1, 0.0);
        let mut shape = shape;
        shape.data = vec![0.0; values[0].len()];
        shape.in_channels = values[0].len();
        let mut s = SampleStore::new(&shape, 1, Precision::F64);
        for (k, v) in values.iter().enumerate() {
            s.push(k as u64 + 1, v).unwrap();
        }
        s
    }

    #[test]
    fn constant_snapshots_give_point_interval() {
        let s = store_of(&[&[0.4, 0.6], &[0.4, 0.6], &[0.4, 0.6]]);
        let b = decile_bounds(&s).unwrap();
        assert_eq!(b.lower, vec![0.4, 0.6]);
        assert_eq!(b.upper, vec![0.4, 0.6]);
        assert_eq!(b.importance(), vec![0.0, 0.0]);
    }

    #[test]
    fn deciles_of_tenths() {
        let rows: Vec<Vec<f64>> = (1..=10).rev().map(|i| vec![i as f64 / 10.0]).collect();
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let b = decile_bounds(&store_of(&refs)).unwrap();
        assert!((b.lower[0] - 0.19).abs() < 1e-12);
        assert!((b.upper[0] - 0.91).abs() < 1e-12);
    }

    #[test]
    fn one_snapshot_rejected() {
        assert!(decile_bounds(&store_of(&[&[0.5]])).is_err());
    }

    #[test]
    fn truncate_keeps_prefix() {
        let mut s = store_of(&[&[0.1], &[0.2], &[0.3]]);
        s.truncate_after(2);
        assert_eq!(s.step_indices, vec![1, 2]);
        assert_eq!(s.snapshot(1), vec![0.2]);
    }
}
