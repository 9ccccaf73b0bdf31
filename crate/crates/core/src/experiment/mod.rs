//! Sequential two-task protocol, evaluation helpers and report output.

mod config;
mod report;

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use config::{Epochs, ExperimentConfig, LearningConfig, Method, TaskConfig};
pub use report::{
    aggregate, emit_outputs, metrics_from_csv, metrics_to_csv, render_svg, summary_to_csv, MetricsLog, MetricsRow,
    RunSummary, Stat, SummaryRow,
};

use crate::continual::{
    build_episodic_memory, build_pseudo_dataset, decile_bounds, langevin_sample_features, LangevinOutcome,
    WeightBoundsMap,
};
use crate::data::{mix_and_shuffle, replicate_to, subset_balanced, Dataset};
use crate::encoding::{Encoder, SpikeWave};
use crate::error::{Error, Result};
use crate::plasticity::{freeze_top_fraction, BatchStats, FreezeMask, NoiseConfig, SynapseBounds};
use crate::snn::{prune_smallest, NetworkState};
use crate::training::{
    accuracy_features, encode_dataset, layer_inputs, readout_features, train_feature_layer, FeatureLearning,
    ReadoutLearning,
};

/// Independent random streams of one seed, so that a phase draws the same
/// numbers no matter which other phases ran before it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Data = 1,
    Init = 2,
    Task1Features = 3,
    Task1Readout = 4,
    Prepare = 5,
    Task2Features = 6,
    Task2Readout = 7,
    Mix = 8,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Train/test split of one task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub train: Dataset,
    pub test: Dataset,
}

/// Loads a task and draws its class-balanced train and test subsets.
pub fn load_task<R: Rng + ?Sized>(cfg: &TaskConfig, classes: u8, rng: &mut R) -> Result<TaskData> {
    let take = |ds: Dataset, per_class: usize, rng: &mut R| {
        if per_class == 0 {
            Ok(ds)
        } else {
            subset_balanced(&ds, per_class, classes, rng)
        }
    };
    let train = take(cfg.source.load_train()?, cfg.train_per_class, rng)?;
    let test = take(cfg.source.load_test()?, cfg.test_per_class, rng)?;
    Ok(TaskData { train, test })
}

/// Learning state carried through the layers of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct LearningState {
    pub s1: FeatureLearning,
    pub s2: FeatureLearning,
    pub readout_stats: BatchStats,
}

impl LearningState {
    pub fn fresh(cfg: &LearningConfig, classes: usize) -> Self {
        let f = FeatureLearning {
            params: cfg.feature,
            schedule: cfg.schedule,
        };
        Self {
            s1: f.clone(),
            s2: f,
            readout_stats: BatchStats::chance(classes),
        }
    }
}

/// Constraints applied to the readout while it learns.
#[derive(Clone, Copy, Default)]
pub struct ReadoutConstraints<'a> {
    pub noise: Option<NoiseConfig>,
    pub mask: Option<&'a FreezeMask>,
    pub bounds: Option<&'a WeightBoundsMap>,
}

/// Trains the two feature layers with STDP on already encoded inputs and
/// returns the spike waves entering the readout.
pub fn train_features<R: Rng + ?Sized>(
    net: &mut NetworkState,
    inputs: &[SpikeWave],
    epochs: Epochs,
    learning: &mut LearningState,
    rng: &mut R,
) -> Result<Vec<SpikeWave>> {
    let convs = net.conv_layers();
    train_feature_layer(net, convs[0], inputs, epochs.s1, &mut learning.s1, rng)?;
    let mid = layer_inputs(net, inputs, convs[1])?;
    train_feature_layer(net, convs[1], &mid, epochs.s2, &mut learning.s2, rng)?;
    drop(mid);
    readout_features(net, inputs)
}

/// R-STDP on the readout for `epochs` passes, calling `on_epoch` with the
/// 1-based epoch and the network after every pass.
#[allow(clippy::too_many_arguments)]
pub fn train_readout<R, F>(
    net: &mut NetworkState,
    features: &[SpikeWave],
    labels: &[u8],
    epochs: usize,
    cfg: &LearningConfig,
    learning: &mut LearningState,
    constraints: ReadoutConstraints<'_>,
    rng: &mut R,
    mut on_epoch: F,
) -> Result<()>
where
    R: Rng + ?Sized,
    F: FnMut(usize, &NetworkState) -> Result<()>,
{
    let mut rl = ReadoutLearning::new(cfg.readout, learning.readout_stats, cfg.batch_size);
    if let Some(noise) = constraints.noise {
        rl.noise = noise;
    }
    rl.mask = constraints.mask;
    rl.bounds = constraints.bounds.map(|b| b as &dyn SynapseBounds);
    for epoch in 1..=epochs {
        rl.epoch(net, features, labels, rng)?;
        on_epoch(epoch, net)?;
    }
    learning.readout_stats = rl.stats;
    Ok(())
}

/// Layer-by-layer training of `net` on `ds`: S1 and S2 with STDP, then the
/// readout with R-STDP.
pub fn train_task<R: Rng + ?Sized>(
    net: &mut NetworkState,
    encoder: &Encoder,
    ds: &Dataset,
    epochs: Epochs,
    cfg: &LearningConfig,
    learning: &mut LearningState,
    constraints: ReadoutConstraints<'_>,
    rng: &mut R,
) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::InvalidInput("cannot train on an empty dataset".into()));
    }
    let inputs = encode_dataset(encoder, ds)?;
    let features = train_features(net, &inputs, epochs, learning, rng)?;
    train_readout(net, &features, &ds.labels, epochs.s3, cfg, learning, constraints, rng, |_, _| Ok(()))
}

/// Fraction of `ds` the network classifies correctly.
pub fn evaluate(net: &NetworkState, encoder: &Encoder, ds: &Dataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::InvalidInput("cannot evaluate on an empty dataset".into()));
    }
    let features = readout_features(net, &encode_dataset(encoder, ds)?)?;
    accuracy_features(net, &features, &ds.labels)
}

/// Accuracy of copies of `net` whose smallest readout weights were pruned.
pub fn prune_sweep(net: &NetworkState, encoder: &Encoder, test: &Dataset, fractions: &[f64]) -> Result<Vec<(f64, f64)>> {
    if test.is_empty() {
        return Err(Error::InvalidInput("cannot evaluate on an empty dataset".into()));
    }
    let features = readout_features(net, &encode_dataset(encoder, test)?)?;
    prune_sweep_features(net, &features, &test.labels, fractions)
}

pub fn prune_sweep_features(
    net: &NetworkState,
    features: &[SpikeWave],
    labels: &[u8],
    fractions: &[f64],
) -> Result<Vec<(f64, f64)>> {
    let layer = net.output_layer();
    let w_min = crate::snn::W_MIN;
    fractions
        .iter()
        .map(|&f| {
            let mut pruned = net.clone();
            *pruned.weights_mut(layer) = prune_smallest(net.weights(layer), f, w_min)?;
            Ok((f, accuracy_features(&pruned, features, labels)?))
        })
        .collect()
}

/// Normalized histogram of one layer's weights over `[w_min, w_max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// `bins + 1` bin edges.
    pub edges: Vec<f64>,
    /// Fraction of weights per bin; sums to 1.
    pub mass: Vec<f64>,
}

impl Histogram {
    pub fn mode(&self) -> usize {
        let mut best = 0;
        for (i, &m) in self.mass.iter().enumerate() {
            if m > self.mass[best] {
                best = i;
            }
        }
        best
    }
}

pub fn weight_histogram(net: &NetworkState, layer: usize, bins: usize) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::InvalidInput("histogram needs at least one bin".into()));
    }
    let w = net
        .weights
        .get(layer)
        .and_then(Option::as_ref)
        .ok_or_else(|| Error::InvalidInput(format!("layer {layer} has no weights")))?;
    let (lo, hi) = (crate::snn::W_MIN, crate::snn::W_MAX);
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in &w.data {
        let b = (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let n = w.data.len().max(1) as f64;
    Ok(Histogram {
        edges: (0..=bins).map(|i| lo + i as f64 * width).collect(),
        mass: counts.iter().map(|&c| c as f64 / n).collect(),
    })
}

/// Task 1 after training, shared by every method with the same Task-1 setup.
pub struct Task1Stage {
    pub net: NetworkState,
    pub learning: LearningState,
    pub task1: TaskData,
    pub task2: TaskData,
    /// Readout inputs of the Task-1 training set under the Task-1 network.
    pub task1_train_features: Vec<SpikeWave>,
    pub task1_test_features: Vec<SpikeWave>,
    /// Task-1 test accuracy per readout epoch.
    pub readout_trace: Vec<f64>,
    /// Accuracies before Task 2 starts.
    pub baseline: MetricsRow,
}

/// Task 2 after the feature layers were retrained.
pub struct Task2Features {
    pub net: NetworkState,
    pub learning: LearningState,
    pub train: Dataset,
    pub train_features: Vec<SpikeWave>,
    pub eval_task1_test: Vec<SpikeWave>,
    pub eval_task2_test: Vec<SpikeWave>,
    pub eval_task2_train: Vec<SpikeWave>,
}

/// Outcome of one method on one seed.
pub struct SeedRun {
    pub log: MetricsLog,
    pub task1_net: NetworkState,
    pub final_net: NetworkState,
    pub langevin: Option<LangevinOutcome>,
    pub bounds: Option<WeightBoundsMap>,
    pub mask: Option<FreezeMask>,
    pub pseudo: Option<Dataset>,
}

/// Runs the protocol for several methods and seeds on one base config,
/// reusing Task-1 training and Task-2 feature retraining wherever the
/// inputs coincide. Results equal those of independent runs.
pub struct Session {
    base: ExperimentConfig,
    encoder: Encoder,
    task1: BTreeMap<(u64, Vec<usize>, bool), Arc<Task1Stage>>,
    task2: BTreeMap<(u64, Vec<usize>, bool, String), Arc<Task2Features>>,
}

impl Session {
    pub fn new(base: ExperimentConfig) -> Result<Self> {
        base.validate()?;
        let encoder = Encoder::new(base.encoder.clone())?;
        Ok(Self {
            base,
            encoder,
            task1: BTreeMap::new(),
            task2: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.base
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    fn with_method(&self, method: &Method) -> ExperimentConfig {
        ExperimentConfig {
            method: method.clone(),
            ..self.base.clone()
        }
    }

    /// Task-1 network trained as `method` prescribes.
    pub fn task1(&mut self, method: &Method, seed: u64) -> Result<Arc<Task1Stage>> {
        let cfg = self.with_method(method);
        cfg.validate()?;
        let key = (seed, cfg.radii(), method.uses_noise());
        if let Some(s) = self.task1.get(&key) {
            return Ok(s.clone());
        }
        let stage = Arc::new(run_task1(&cfg, &self.encoder, seed)?);
        self.task1.insert(key, stage.clone());
        Ok(stage)
    }

    fn task2_features(&mut self, method: &Method, seed: u64, stage: &Task1Stage) -> Result<Arc<Task2Features>> {
        let cfg = self.with_method(method);
        let data_key = match method {
            Method::Fewshot { per_class } => format!("fewshot-{per_class}"),
            Method::PseudoRehearsal { per_class, .. } => format!("pseudo-{per_class}-{}", method_hash(method)),
            Method::Joint => "joint".into(),
            _ => "plain".into(),
        };
        let key = (seed, cfg.radii(), method.uses_noise(), data_key);
        if let Some(s) = self.task2.get(&key) {
            return Ok(s.clone());
        }
        let train = task2_training_set(&cfg, &self.encoder, seed, stage)?;
        let features = Arc::new(retrain_features(&cfg, &self.encoder, seed, stage, train)?);
        self.task2.insert(key, features.clone());
        Ok(features)
    }

    /// Full sequential run of `method` on `seed`.
    pub fn run(&mut self, method: &Method, seed: u64) -> Result<SeedRun> {
        let cfg = self.with_method(method);
        cfg.validate()?;
        let stage = self.task1(method, seed)?;
        let mut prep_rng = stream_rng(seed, Stream::Prepare);
        let readout = stage.net.output_layer();

        let mut langevin = None;
        let mut bounds = None;
        let mut mask = None;
        match method {
            Method::Langevin(lcfg) => {
                let held = heldout_subset(&cfg, &stage.task1.test, &mut prep_rng)?;
                let held_features = pick(&stage.task1_test_features, &held);
                let held_labels: Vec<u8> = held.iter().map(|&i| stage.task1.test.label(i)).collect();
                let outcome = langevin_sample_features(
                    &stage.net,
                    (&stage.task1_train_features, &stage.task1.train.labels),
                    (&held_features, &held_labels),
                    &cfg.learning.readout,
                    stage.learning.readout_stats,
                    cfg.learning.batch_size,
                    lcfg,
                    &mut prep_rng,
                )?;
                bounds = Some(decile_bounds(&outcome.store)?);
                langevin = Some(outcome);
            }
            Method::Freeze { fraction } => {
                mask = Some(freeze_top_fraction(&stage.net.weights(readout).data, *fraction)?);
            }
            _ => {}
        }

        let features = self.task2_features(method, seed, &stage)?;
        let mut net = features.net.clone();
        let mut learning = features.learning.clone();
        // readout weights start from Task 1; only the feature layers moved
        *net.weights_mut(readout) = stage.net.weights(readout).clone();
        if let Some(b) = &bounds {
            b.project(net.weights_mut(readout));
        }

        let mut log = MetricsLog {
            method: method.label(),
            seed,
            rows: vec![stage.baseline],
        };
        let noise = method
            .uses_noise()
            .then(|| NoiseConfig::relative_to(&cfg.learning.readout, cfg.learning.noise_ratio));
        let constraints = ReadoutConstraints {
            noise,
            mask: mask.as_ref(),
            bounds: bounds.as_ref(),
        };
        let mut rng = stream_rng(seed, Stream::Task2Readout);
        train_readout(
            &mut net,
            &features.train_features,
            &features.train.labels,
            cfg.epochs_task2.s3,
            &cfg.learning,
            &mut learning,
            constraints,
            &mut rng,
            |epoch, net| {
                log.rows.push(MetricsRow {
                    epoch,
                    task1_test: accuracy_features(net, &features.eval_task1_test, &stage.task1.test.labels)?,
                    task2_test: accuracy_features(net, &features.eval_task2_test, &stage.task2.test.labels)?,
                    task2_train: accuracy_features(net, &features.eval_task2_train, &stage.task2.train.labels)?,
                });
                Ok(())
            },
        )?;
        if let Some(m) = &mask {
            let before = &stage.net.weights(readout).data;
            let after = &net.weights(readout).data;
            if m.frozen.iter().enumerate().any(|(i, &f)| f && before[i].to_bits() != after[i].to_bits()) {
                return Err(Error::InvalidInput("a frozen readout weight changed during Task 2".into()));
            }
        }
        Ok(SeedRun {
            log,
            task1_net: stage.net.clone(),
            final_net: net,
            langevin,
            bounds,
            mask,
            pseudo: (matches!(method, Method::PseudoRehearsal { .. })).then(|| features.train.clone()),
        })
    }
}

fn method_hash(method: &Method) -> String {
    serde_json::to_string(method).unwrap_or_default()
}

fn pick(waves: &[SpikeWave], indices: &[usize]) -> Vec<SpikeWave> {
    indices.iter().map(|&i| waves[i].clone()).collect()
}

/// Indices of the held-out Task-1 test images used for the Langevin check.
fn heldout_subset<R: Rng + ?Sized>(cfg: &ExperimentConfig, test: &Dataset, rng: &mut R) -> Result<Vec<usize>> {
    let by = test.indices_by_class();
    let mut out = Vec::new();
    for c in 0..cfg.classes() {
        let pool = by.get(&c).map(Vec::as_slice).unwrap_or(&[]);
        let n = cfg.heldout_per_class.min(pool.len());
        let mut pool = pool.to_vec();
        let (chosen, _) = rand::seq::SliceRandom::partial_shuffle(pool.as_mut_slice(), rng, n);
        out.extend_from_slice(chosen);
    }
    out.sort_unstable();
    if out.is_empty() {
        return Err(Error::InvalidInput("no held-out Task-1 samples".into()));
    }
    Ok(out)
}

fn fresh_network(cfg: &ExperimentConfig, seed: u64) -> Result<NetworkState> {
    let mut layers = cfg.layers.clone();
    let mut radii = cfg.radii().into_iter();
    for l in layers.iter_mut().filter(|l| l.kind == crate::snn::LayerKind::Conv) {
        l.inhibition_radius = radii.next().unwrap_or(0);
    }
    NetworkState::new(
        &cfg.encoder,
        (crate::data::SIDE, crate::data::SIDE),
        layers,
        cfg.groups,
        cfg.init,
        &mut stream_rng(seed, Stream::Init),
    )
}

fn run_task1(cfg: &ExperimentConfig, encoder: &Encoder, seed: u64) -> Result<Task1Stage> {
    let mut data_rng = stream_rng(seed, Stream::Data);
    let task1 = load_task(&cfg.task1, cfg.classes(), &mut data_rng)?;
    let task2 = load_task(&cfg.task2, cfg.classes(), &mut data_rng)?;
    if task1.train.is_empty() || task2.train.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    let mut net = fresh_network(cfg, seed)?;
    let mut learning = LearningState::fresh(&cfg.learning, cfg.groups.classes);

    let inputs = encode_dataset(encoder, &task1.train)?;
    let features = train_features(
        &mut net,
        &inputs,
        cfg.epochs_task1,
        &mut learning,
        &mut stream_rng(seed, Stream::Task1Features),
    )?;
    drop(inputs);
    let test_features = readout_features(&net, &encode_dataset(encoder, &task1.test)?)?;
    let noise = cfg
        .method
        .uses_noise()
        .then(|| NoiseConfig::relative_to(&cfg.learning.readout, cfg.learning.noise_ratio));
    let mut trace = Vec::new();
    train_readout(
        &mut net,
        &features,
        &task1.train.labels,
        cfg.epochs_task1.s3,
        &cfg.learning,
        &mut learning,
        ReadoutConstraints {
            noise,
            ..Default::default()
        },
        &mut stream_rng(seed, Stream::Task1Readout),
        |_, net| {
            trace.push(accuracy_features(net, &test_features, &task1.test.labels)?);
            Ok(())
        },
    )?;
    let task1_test = match trace.last() {
        Some(&a) => a,
        None => accuracy_features(&net, &test_features, &task1.test.labels)?,
    };
    let baseline = MetricsRow {
        epoch: 0,
        task1_test,
        task2_test: evaluate(&net, encoder, &task2.test)?,
        task2_train: evaluate(&net, encoder, &task2.train)?,
    };
    Ok(Task1Stage {
        net,
        learning,
        task1,
        task2,
        task1_train_features: features,
        task1_test_features: test_features,
        readout_trace: trace,
        baseline,
    })
}

/// Task-2 training set as the method prescribes. Only this set (and the
/// method's own buffer inside it) reaches Task-2 training.
fn task2_training_set(cfg: &ExperimentConfig, encoder: &Encoder, seed: u64, stage: &Task1Stage) -> Result<Dataset> {
    let mut rng = stream_rng(seed, Stream::Mix);
    let task2 = &stage.task2.train;
    Ok(match &cfg.method {
        Method::Fewshot { per_class } => {
            let memory = build_episodic_memory(&stage.task1.train, *per_class, cfg.classes(), &mut rng)?;
            let replicated = replicate_to(&memory.samples, stage.task1.train.len(), &mut rng)?;
            mix_and_shuffle(&[&replicated, task2], &mut rng)?
        }
        Method::PseudoRehearsal {
            per_class,
            bars,
            attempts_per_sample,
        } => {
            let quota = per_class * cfg.groups.classes;
            let pseudo = build_pseudo_dataset(
                &stage.net,
                encoder,
                *per_class,
                bars,
                &mut rng,
                quota.saturating_mul(*attempts_per_sample),
            )?;
            mix_and_shuffle(&[&pseudo, task2], &mut rng)?
        }
        Method::Joint => mix_and_shuffle(&[&stage.task1.train, task2], &mut rng)?,
        _ => task2.clone(),
    })
}

fn retrain_features(
    cfg: &ExperimentConfig,
    encoder: &Encoder,
    seed: u64,
    stage: &Task1Stage,
    train: Dataset,
) -> Result<Task2Features> {
    let mut net = stage.net.clone();
    let mut learning = if cfg.learning.reset_learning_rates {
        LearningState {
            readout_stats: BatchStats::chance(cfg.groups.classes),
            ..LearningState::fresh(&cfg.learning, cfg.groups.classes)
        }
    } else {
        stage.learning.clone()
    };
    let inputs = encode_dataset(encoder, &train)?;
    let train_features = train_features(
        &mut net,
        &inputs,
        cfg.epochs_task2,
        &mut learning,
        &mut stream_rng(seed, Stream::Task2Features),
    )?;
    drop(inputs);
    let feats = |ds: &Dataset| readout_features(&net, &encode_dataset(encoder, ds)?);
    Ok(Task2Features {
        eval_task1_test: feats(&stage.task1.test)?,
        eval_task2_test: feats(&stage.task2.test)?,
        eval_task2_train: feats(&stage.task2.train)?,
        net,
        learning,
        train,
        train_features,
    })
}

/// Runs every seed of `cfg`.
pub fn run_sequential(cfg: &ExperimentConfig) -> Result<Vec<MetricsLog>> {
    let mut session = Session::new(cfg.clone())?;
    cfg.seeds
        .iter()
        .map(|&seed| Ok(session.run(&cfg.method, seed)?.log))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::snn::{default_layers, OutputGroups, WeightInit};

    #[test]
    fn streams_are_independent() {
        let a: u64 = stream_rng(3, Stream::Data).random();
        let b: u64 = stream_rng(3, Stream::Init).random();
        let c: u64 = stream_rng(3, Stream::Data).random();
        assert_ne!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn histogram_sums_to_one() {
        let net = NetworkState::new(
            &crate::encoding::EncoderConfig::default(),
            (28, 28),
            default_layers(),
            OutputGroups::default(),
            WeightInit::default(),
            &mut stream_rng(0, Stream::Init),
        )
        .unwrap();
        let h = weight_histogram(&net, 4, 12).unwrap();
        assert!((h.mass.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert_eq!(h.mode(), 11);
        assert_eq!(h.edges.len(), 13);
        assert!(weight_histogram(&net, 1, 12).is_err());
    }
}
