use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::continual::{BarPatternConfig, LangevinConfig};
use crate::data::{SourceFormat, TaskSource};
use crate::encoding::EncoderConfig;
use crate::error::{Error, Result};
use crate::plasticity::{LRSchedule, PlasticityParams};
use crate::snn::{default_layers, LayerKind, LayerSpec, OutputGroups, WeightInit};

/// Continual-learning strategy applied when moving from Task 1 to Task 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Method {
    /// No protection and no lateral inhibition.
    Vanilla,
    LateralInhibition,
    PseudoRehearsal {
        per_class: usize,
        #[serde(default)]
        bars: BarPatternConfig,
        /// Attempts allowed per requested pseudo-sample.
        #[serde(default = "hundred")]
        attempts_per_sample: usize,
    },
    Fewshot {
        per_class: usize,
    },
    NoiseReg,
    Freeze {
        fraction: f64,
    },
    Langevin(LangevinConfig),
    Joint,
}

fn hundred() -> usize {
    100
}

impl Method {
    /// Short label used in file names and tables.
    pub fn label(&self) -> String {
        match self {
            Method::Vanilla => "vanilla".into(),
            Method::LateralInhibition => "lateral_inhibition".into(),
            Method::PseudoRehearsal { per_class, .. } => format!("pseudo_rehearsal_{per_class}"),
            Method::Fewshot { per_class } => format!("fewshot_{per_class}"),
            Method::NoiseReg => "noise_reg".into(),
            Method::Freeze { fraction } => format!("freeze_{fraction}"),
            Method::Langevin(_) => "langevin".into(),
            Method::Joint => "joint".into(),
        }
    }

    /// Vanilla runs without lateral inhibition; every other method uses the
    /// configured radii.
    pub fn uses_inhibition(&self) -> bool {
        !matches!(self, Method::Vanilla)
    }

    pub fn uses_noise(&self) -> bool {
        matches!(self, Method::NoiseReg)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Method::PseudoRehearsal { bars, attempts_per_sample, .. } => {
                bars.validate()?;
                if *attempts_per_sample == 0 {
                    return Err(Error::Config("attempts_per_sample must be >= 1".into()));
                }
            }
            Method::Fewshot { per_class } if *per_class == 0 => {
                return Err(Error::Config("fewshot needs at least one stored sample per class".into()))
            }
            Method::Freeze { fraction } if !(0.0..=1.0).contains(fraction) => {
                return Err(Error::Config(format!("freeze fraction {fraction} not in [0, 1]")))
            }
            Method::Langevin(cfg) => cfg.validate()?,
            _ => {}
        }
        Ok(())
    }
}

/// Epochs for S1, S2 and S3.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Epochs {
    pub s1: usize,
    pub s2: usize,
    pub s3: usize,
}

impl Epochs {
    pub const fn new(s1: usize, s2: usize, s3: usize) -> Self {
        Self { s1, s2, s3 }
    }
}

/// Where a task's data lives and how much of it a run uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskConfig {
    #[serde(flatten)]
    pub source: TaskSource,
    /// Training images kept per class; 0 keeps every image.
    #[serde(default)]
    pub train_per_class: usize,
    #[serde(default)]
    pub test_per_class: usize,
}

impl TaskConfig {
    pub fn idx_dir(name: &str, dir: impl AsRef<Path>, train_per_class: usize, test_per_class: usize) -> Self {
        Self {
            source: TaskSource::idx_dir(name, dir, SourceFormat::Digits),
            train_per_class,
            test_per_class,
        }
    }

    fn resolve(&mut self, base: &Path) {
        for p in [
            &mut self.source.train_images,
            &mut self.source.train_labels,
            &mut self.source.test_images,
            &mut self.source.test_labels,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

/// Learning parameters of the three trainable layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearningConfig {
    /// STDP parameters of S1 and S2.
    pub feature: PlasticityParams,
    /// Learning-rate doubling schedule of S1 and S2.
    pub schedule: LRSchedule,
    /// R-STDP parameters of S3.
    pub readout: PlasticityParams,
    /// Samples per hit/miss batch for the R-STDP rate adaptation; 0 adapts
    /// once per epoch.
    pub batch_size: usize,
    /// Noise amplitude relative to the mean learning rate (noise_reg only).
    pub noise_ratio: f64,
    pub reset_learning_rates: bool,
}

impl Default for LearningConfig {
    fn default() -> Self {
        Self {
            feature: PlasticityParams::default(),
            schedule: LRSchedule::default(),
            readout: PlasticityParams {
                stabilizer: false,
                ..PlasticityParams::default()
            },
            batch_size: 0,
            noise_ratio: 0.5,
            reset_learning_rates: true,
        }
    }
}

impl LearningConfig {
    /// Readout magnitudes scaled up 15x for a tenth of the data and a few
    /// dozen epochs, with the punishment term on non-causal synapses off.
    pub fn desk() -> Self {
        let base = Self::default();
        let x = 15.0;
        Self {
            readout: PlasticityParams {
                a_r_plus: base.readout.a_r_plus * x,
                a_r_minus: base.readout.a_r_minus * x,
                a_p_plus: 0.0,
                a_p_minus: base.readout.a_p_minus * x,
                ..base.readout
            },
            ..base
        }
    }
}

/// Everything that determines a sequential-learning run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub method: Method,
    pub seeds: Vec<u64>,
    pub task1: TaskConfig,
    pub task2: TaskConfig,
    pub epochs_task1: Epochs,
    pub epochs_task2: Epochs,
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default = "default_layers")]
    pub layers: Vec<LayerSpec>,
    /// Inhibition radii of the conv layers, in order, for inhibiting methods.
    #[serde(default = "default_radii")]
    pub inhibition_radii: Vec<usize>,
    #[serde(default)]
    pub groups: OutputGroups,
    #[serde(default)]
    pub init: WeightInit,
    #[serde(default)]
    pub learning: LearningConfig,
    /// Held-out Task-1 test images per class for the Langevin accuracy check.
    #[serde(default = "hundred")]
    pub heldout_per_class: usize,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Worker threads; 0 uses every core.
    #[serde(default)]
    pub threads: usize,
}

fn default_radii() -> Vec<usize> {
    vec![3, 1, 0]
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    /// Desk-scale preset: 240 training and 100 test images per class, S3
    /// trained for 20 epochs on Task 1 and 30 on Task 2.
    pub fn desk(data_dir: impl AsRef<Path>, method: Method) -> Self {
        let data = data_dir.as_ref();
        Self {
            name: "desk".into(),
            method,
            seeds: vec![1, 2, 3],
            task1: TaskConfig::idx_dir("mnist", data.join("mnist"), 240, 100),
            task2: TaskConfig::idx_dir("fashion", data.join("fashion"), 240, 100),
            epochs_task1: Epochs::new(2, 4, 20),
            epochs_task2: Epochs::new(2, 4, 30),
            encoder: EncoderConfig::default(),
            layers: default_layers(),
            inhibition_radii: default_radii(),
            groups: OutputGroups::default(),
            init: WeightInit::default(),
            learning: LearningConfig::desk(),
            heldout_per_class: 100,
            out_dir: default_out_dir(),
            threads: 0,
        }
    }

    /// Full-scale preset: 2400 training and 400 test images per class, S3
    /// trained for 50 epochs on Task 1 and 100 on Task 2, five seeds.
    pub fn paper(data_dir: impl AsRef<Path>, method: Method) -> Self {
        let data = data_dir.as_ref();
        Self {
            name: "paper".into(),
            seeds: vec![1, 2, 3, 4, 5],
            task1: TaskConfig::idx_dir("mnist", data.join("mnist"), 2400, 400),
            task2: TaskConfig::idx_dir("fashion", data.join("fashion"), 2400, 400),
            epochs_task1: Epochs::new(2, 4, 50),
            epochs_task2: Epochs::new(2, 4, 100),
            learning: LearningConfig::default(),
            ..Self::desk(data, method)
        }
    }

    /// Parses a TOML config; relative data paths are resolved against the
    /// file's directory.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.task1.resolve(base);
        cfg.task2.resolve(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// The effective config with every default filled in.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        self.method.validate()?;
        self.encoder.validate()?;
        self.learning.feature.validate()?;
        self.learning.readout.validate()?;
        if !(self.learning.noise_ratio >= 0.0) {
            return Err(Error::Config("noise_ratio must be >= 0".into()));
        }
        for l in &self.layers {
            l.validate()?;
        }
        let convs = self.layers.iter().filter(|l| l.kind == LayerKind::Conv).count();
        if convs != 3 {
            return Err(Error::Config(format!("expected 3 conv layers, found {convs}")));
        }
        if self.inhibition_radii.len() != convs {
            return Err(Error::Config(format!(
                "inhibition_radii has {} entries for {convs} conv layers",
                self.inhibition_radii.len()
            )));
        }
        if self.heldout_per_class == 0 && matches!(self.method, Method::Langevin(_)) {
            return Err(Error::Config("langevin needs heldout_per_class >= 1".into()));
        }
        Ok(())
    }

    /// Conv-layer inhibition radii the method trains with.
    pub fn radii(&self) -> Vec<usize> {
        if self.method.uses_inhibition() {
            self.inhibition_radii.clone()
        } else {
            vec![0; self.inhibition_radii.len()]
        }
    }

    pub fn classes(&self) -> u8 {
        self.groups.classes as u8
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let cfg = ExperimentConfig::desk("data", Method::Freeze { fraction: 0.1 });
        let text = cfg.to_toml().unwrap();
        let back = ExperimentConfig::from_toml(&text, Path::new("")).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn minimal_file_gets_defaults() {
        let text = r#"
            name = "t"
            seeds = [7]
            method = { kind = "langevin", sigma = 0.001 }
            epochs_task1 = { s1 = 1, s2 = 1, s3 = 1 }
            epochs_task2 = { s1 = 0, s2 = 0, s3 = 2 }
            [task1]
            name = "a"
            train_images = "a/ti"
            train_labels = "a/tl"
            test_images = "a/vi"
            test_labels = "a/vl"
            [task2]
            name = "b"
            train_images = "/abs/ti"
            train_labels = "b/tl"
            test_images = "b/vi"
            test_labels = "b/vl"
        "#;
        let cfg = ExperimentConfig::from_toml(text, Path::new("/cfg")).unwrap();
        assert_eq!(cfg.task1.source.train_images, PathBuf::from("/cfg/a/ti"));
        assert_eq!(cfg.task2.source.train_images, PathBuf::from("/abs/ti"));
        assert!(cfg.learning.reset_learning_rates);
        match cfg.method {
            Method::Langevin(l) => {
                assert_eq!(l.sigma, 0.001);
                assert_eq!(l.a_min, LangevinConfig::default().a_min);
            }
            m => panic!("parsed {m:?}"),
        }
    }

    #[test]
    fn missing_method_parameter_rejected() {
        let mut cfg = ExperimentConfig::desk("data", Method::Vanilla);
        cfg.method = Method::Freeze { fraction: 1.5 };
        assert!(cfg.validate().is_err());
        let text = ExperimentConfig::desk("data", Method::Vanilla)
            .to_toml()
            .unwrap()
            .replace("kind = \"vanilla\"", "kind = \"fewshot\"");
        assert!(ExperimentConfig::from_toml(&text, Path::new("")).is_err());
    }

    #[test]
    fn vanilla_has_no_inhibition() {
        let cfg = ExperimentConfig::desk("data", Method::Vanilla);
        assert_eq!(cfg.radii(), vec![0, 0, 0]);
        let cfg = ExperimentConfig::desk("data", Method::Joint);
        assert_eq!(cfg.radii(), vec![3, 1, 0]);
    }
}
