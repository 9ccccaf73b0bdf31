//! The `snncl` command line.
//!
//! Every command reads an experiment config, applies `--set key=value`
//! overrides and `--seed`, and writes its outputs plus a `manifest.toml` with
//! the effective config into the output directory. The output directory is
//! taken from the config, then `--out-dir`, then `SNNCL_OUT_DIR`, the later
//! one winning. Exit status is 0 on success, 1 on a runtime failure and 2 on
//! a usage error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::{load_network, save_bounds, save_network, save_store};
use crate::continual::{build_pseudo_dataset, decile_bounds, langevin_sample_features, BarPatternConfig, LangevinConfig};
use crate::data::write_idx;
use crate::encoding::Encoder;
use crate::error::{Error, Result};
use crate::experiment::{
    aggregate, emit_outputs, load_task, metrics_from_csv, prune_sweep, stream_rng, weight_histogram, ExperimentConfig,
    Method, MetricsLog, Session, Stream,
};
use crate::plasticity::BatchStats;
use crate::snn::NetworkState;
use crate::training::{encode_dataset, readout_features};

pub const OUT_DIR_ENV: &str = "SNNCL_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "snncl", version, about = "Spiking network continual-learning experiments", arg_required_else_help = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Run this seed only instead of the config's seed list.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Override a config key, e.g. `--set epochs_task1.s3=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the network on Task 1 and save it.
    Train(Common),
    /// Run the sequential Task 1 -> Task 2 protocol for the configured method.
    Run(Common),
    /// Langevin sampling of the Task-1 readout and its decile bounds.
    LangevinSample {
        #[command(flatten)]
        common: Common,
        /// Use this network instead of training Task 1.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Task-1 test accuracy after pruning the smallest readout weights.
    PruneSweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "0,0.5,0.9,0.95,1")]
        fractions: Vec<f64>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Bar pseudo-patterns labelled by the Task-1 network, written as IDX.
    PseudoGen {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 100)]
        per_class: usize,
        #[arg(long, default_value_t = 100)]
        attempts_per_sample: usize,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Weight histogram of one layer (the readout by default).
    Histogram {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 12)]
        bins: usize,
        #[arg(long)]
        layer: Option<usize>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Summary CSV and plots from metrics CSVs of earlier runs.
    Report {
        #[command(flatten)]
        common: Common,
        /// Metrics files; defaults to `<out-dir>/metrics.csv`.
        #[arg(long)]
        input: Vec<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Train(_) => "train",
            Command::Run(_) => "run",
            Command::LangevinSample { .. } => "langevin-sample",
            Command::PruneSweep { .. } => "prune-sweep",
            Command::PseudoGen { .. } => "pseudo-gen",
            Command::Histogram { .. } => "histogram",
            Command::Report { .. } => "report",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Train(c) | Command::Run(c) => c,
            Command::LangevinSample { common, .. }
            | Command::PruneSweep { common, .. }
            | Command::PseudoGen { common, .. }
            | Command::Histogram { common, .. }
            | Command::Report { common, .. } => common,
        }
    }
}

/// Parses `args` (including the program name) and runs the command,
/// returning the exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    if !cli.command.common().config.is_file() {
        eprintln!("error: config file {} not found", cli.command.common().config.display());
        return 2;
    }
    match execute(&cli.command) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            0
        }
        Err(e @ (Error::Config(_) | Error::Parse(_))) => {
            eprintln!("error: {e}");
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// Applies dotted `key=value` overrides to a TOML document. Values are parsed
/// as TOML and fall back to plain strings.
pub fn apply_overrides(text: &str, overrides: &[String]) -> Result<String> {
    let mut doc: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {item:?} is not KEY=VALUE")))?;
        let value = format!("v = {raw}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));
        let parts: Vec<&str> = key.trim().split('.').collect();
        let (last, path) = parts.split_last().filter(|(l, _)| !l.is_empty()).ok_or_else(|| Error::Config(format!("empty override key in {item:?}")))?;
        let mut table = &mut doc;
        for p in path {
            table = table
                .entry(p.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("override key {key:?} crosses a non-table value")))?;
        }
        table.insert(last.to_string(), value);
    }
    toml::to_string(&doc).map_err(|e| Error::Parse(e.to_string()))
}

/// Effective config of a command: file, then overrides, then `--seed`.
pub fn effective_config(common: &Common) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(&common.config).map_err(|e| Error::io(&common.config, e))?;
    let text = apply_overrides(&text, &common.overrides)?;
    let base = common.config.parent().unwrap_or(Path::new("."));
    let mut cfg = ExperimentConfig::from_toml(&text, base)?;
    if let Some(seed) = common.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(t) = common.threads {
        cfg.threads = t;
    }
    cfg.out_dir = resolve_out_dir(&cfg.out_dir, common.out_dir.as_deref(), std::env::var_os(OUT_DIR_ENV));
    cfg.validate()?;
    Ok(cfg)
}

/// Config value, overridden by the flag, overridden by the environment.
pub fn resolve_out_dir(config: &Path, flag: Option<&Path>, env: Option<OsString>) -> PathBuf {
    match (env.filter(|v| !v.is_empty()), flag) {
        (Some(v), _) => PathBuf::from(v),
        (None, Some(f)) => f.to_path_buf(),
        (None, None) => config.to_path_buf(),
    }
}

fn execute(command: &Command) -> Result<Vec<PathBuf>> {
    let cfg = effective_config(command.common())?;
    if cfg.threads > 0 {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global();
    }
    let out = cfg.out_dir.clone();
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let mut files = match command {
        Command::Train(_) => train(&cfg, &out)?,
        Command::Run(_) => run(&cfg, &out)?,
        Command::LangevinSample { checkpoint, .. } => langevin(&cfg, &out, checkpoint.as_deref())?,
        Command::PruneSweep {
            fractions, checkpoint, ..
        } => prune(&cfg, &out, fractions, checkpoint.as_deref())?,
        Command::PseudoGen {
            per_class,
            attempts_per_sample,
            checkpoint,
            ..
        } => pseudo(&cfg, &out, *per_class, *attempts_per_sample, checkpoint.as_deref())?,
        Command::Histogram {
            bins, layer, checkpoint, ..
        } => histogram(&cfg, &out, *bins, *layer, checkpoint.as_deref())?,
        Command::Report { input, .. } => report(&out, input)?,
    };
    files.push(write_manifest(&cfg, command.name(), &out, &files)?);
    Ok(files)
}

fn write_manifest(cfg: &ExperimentConfig, command: &str, out: &Path, files: &[PathBuf]) -> Result<PathBuf> {
    let mut doc = toml::Table::new();
    doc.insert("command".into(), command.into());
    doc.insert("version".into(), env!("CARGO_PKG_VERSION").into());
    let outputs: Vec<toml::Value> = files
        .iter()
        .map(|f| f.strip_prefix(out).unwrap_or(f).display().to_string().into())
        .collect();
    doc.insert("outputs".into(), toml::Value::Array(outputs));
    doc.insert(
        "config".into(),
        toml::Value::try_from(cfg).map_err(|e| Error::Parse(e.to_string()))?,
    );
    let text = toml::to_string(&doc).map_err(|e| Error::Parse(e.to_string()))?;
    let path = out.join("manifest.toml");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn write_text(path: PathBuf, text: &str, files: &mut Vec<PathBuf>) -> Result<()> {
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    files.push(path);
    Ok(())
}

fn train(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let mut session = Session::new(cfg.clone())?;
    let mut files = Vec::new();
    for &seed in &cfg.seeds {
        let stage = session.task1(&cfg.method, seed)?;
        let path = out.join(format!("task1_seed{seed}.snnw"));
        save_network(&stage.net, &path)?;
        files.push(path);
        let mut csv = String::from("epoch,task1_test\n");
        for (e, a) in stage.readout_trace.iter().enumerate() {
            csv += &format!("{},{a}\n", e + 1);
        }
        write_text(out.join(format!("task1_seed{seed}.csv")), &csv, &mut files)?;
    }
    Ok(files)
}

fn run(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let mut session = Session::new(cfg.clone())?;
    let mut logs = Vec::new();
    let mut files = Vec::new();
    for &seed in &cfg.seeds {
        let r = session.run(&cfg.method, seed)?;
        let path = out.join(format!("final_seed{seed}.snnw"));
        save_network(&r.final_net, &path)?;
        files.push(path);
        if let Some(b) = &r.bounds {
            let path = out.join(format!("bounds_seed{seed}.snnw"));
            save_bounds(b, &path)?;
            files.push(path);
        }
        logs.push(r.log);
    }
    files.extend(emit_outputs(&logs, &aggregate(&logs), out)?);
    Ok(files)
}

/// Task-1 network of `seed`, from a checkpoint or trained in `session`.
fn task1_network(session: &mut Session, seed: u64, checkpoint: Option<&Path>) -> Result<NetworkState> {
    match checkpoint {
        Some(p) => load_network(p),
        None => {
            let method = session.config().method.clone();
            Ok(session.task1(&method, seed)?.net.clone())
        }
    }
}

fn langevin(cfg: &ExperimentConfig, out: &Path, checkpoint: Option<&Path>) -> Result<Vec<PathBuf>> {
    let lcfg = match &cfg.method {
        Method::Langevin(l) => l.clone(),
        _ => LangevinConfig::default(),
    };
    let mut session = Session::new(cfg.clone())?;
    let mut files = Vec::new();
    for &seed in &cfg.seeds {
        let (net, stats) = match checkpoint {
            Some(p) => (load_network(p)?, BatchStats::chance(cfg.groups.classes)),
            None => {
                let stage = session.task1(&cfg.method, seed)?;
                (stage.net.clone(), stage.learning.readout_stats)
            }
        };
        let task1 = load_task(&cfg.task1, cfg.classes(), &mut stream_rng(seed, Stream::Data))?;
        let encoder = session.encoder();
        let train = readout_features(&net, &encode_dataset(encoder, &task1.train)?)?;
        let held = heldout(cfg, encoder, &net, &task1.test, seed)?;
        let outcome = langevin_sample_features(
            &net,
            (&train, &task1.train.labels),
            (&held.0, &held.1),
            &cfg.learning.readout,
            stats,
            cfg.learning.batch_size,
            &lcfg,
            &mut stream_rng(seed, Stream::Prepare),
        )?;
        let bounds = decile_bounds(&outcome.store)?;
        let path = out.join(format!("samples_seed{seed}.snnw"));
        save_store(&outcome.store, &path)?;
        files.push(path);
        let path = out.join(format!("bounds_seed{seed}.snnw"));
        save_bounds(&bounds, &path)?;
        files.push(path);
        let mut csv = String::from("step,heldout_accuracy\n");
        for (step, acc) in &outcome.accuracy_trace {
            csv += &format!("{step},{acc}\n");
        }
        write_text(out.join(format!("langevin_seed{seed}.csv")), &csv, &mut files)?;
    }
    Ok(files)
}

/// Features and labels of a class-balanced held-out slice of the Task-1 test
/// set.
fn heldout(
    cfg: &ExperimentConfig,
    encoder: &Encoder,
    net: &NetworkState,
    test: &crate::data::Dataset,
    seed: u64,
) -> Result<(Vec<crate::encoding::SpikeWave>, Vec<u8>)> {
    let mut rng = stream_rng(seed, Stream::Prepare);
    let held = crate::data::subset_balanced(test, cfg.heldout_per_class, cfg.classes(), &mut rng)?;
    Ok((readout_features(net, &encode_dataset(encoder, &held)?)?, held.labels))
}

fn prune(cfg: &ExperimentConfig, out: &Path, fractions: &[f64], checkpoint: Option<&Path>) -> Result<Vec<PathBuf>> {
    let mut session = Session::new(cfg.clone())?;
    let mut files = Vec::new();
    for &seed in &cfg.seeds {
        let net = task1_network(&mut session, seed, checkpoint)?;
        let task1 = load_task(&cfg.task1, cfg.classes(), &mut stream_rng(seed, Stream::Data))?;
        let sweep = prune_sweep(&net, session.encoder(), &task1.test, fractions)?;
        let mut csv = String::from("fraction,accuracy\n");
        for (f, a) in sweep {
            csv += &format!("{f},{a}\n");
        }
        write_text(out.join(format!("prune_seed{seed}.csv")), &csv, &mut files)?;
    }
    Ok(files)
}

fn pseudo(
    cfg: &ExperimentConfig,
    out: &Path,
    per_class: usize,
    attempts_per_sample: usize,
    checkpoint: Option<&Path>,
) -> Result<Vec<PathBuf>> {
    let bars = match &cfg.method {
        Method::PseudoRehearsal { bars, .. } => bars.clone(),
        _ => BarPatternConfig::default(),
    };
    let mut session = Session::new(cfg.clone())?;
    let mut files = Vec::new();
    for &seed in &cfg.seeds {
        let net = task1_network(&mut session, seed, checkpoint)?;
        let quota = per_class * cfg.groups.classes;
        let ds = build_pseudo_dataset(
            &net,
            session.encoder(),
            per_class,
            &bars,
            &mut stream_rng(seed, Stream::Mix),
            quota.saturating_mul(attempts_per_sample),
        )?;
        let images = out.join(format!("pseudo_seed{seed}-images-idx3-ubyte"));
        let labels = out.join(format!("pseudo_seed{seed}-labels-idx1-ubyte"));
        write_idx(&ds, &images, &labels)?;
        files.push(images);
        files.push(labels);
    }
    Ok(files)
}

fn histogram(
    cfg: &ExperimentConfig,
    out: &Path,
    bins: usize,
    layer: Option<usize>,
    checkpoint: Option<&Path>,
) -> Result<Vec<PathBuf>> {
    let mut session = Session::new(cfg.clone())?;
    let mut files = Vec::new();
    for &seed in &cfg.seeds {
        let net = task1_network(&mut session, seed, checkpoint)?;
        let h = weight_histogram(&net, layer.unwrap_or_else(|| net.output_layer()), bins)?;
        let mut csv = String::from("lower,upper,mass\n");
        for (k, m) in h.mass.iter().enumerate() {
            csv += &format!("{},{},{m}\n", h.edges[k], h.edges[k + 1]);
        }
        write_text(out.join(format!("histogram_seed{seed}.csv")), &csv, &mut files)?;
    }
    Ok(files)
}

fn report(out: &Path, inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let default = [out.join("metrics.csv")];
    let inputs = if inputs.is_empty() { &default[..] } else { inputs };
    let mut logs: Vec<MetricsLog> = Vec::new();
    for path in inputs {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        logs.extend(metrics_from_csv(&text)?);
    }
    emit_outputs(&logs, &aggregate(&logs), out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_set_nested_keys() {
        let text = "name = \"a\"\n[epochs_task1]\ns1 = 2\n";
        let out = apply_overrides(text, &["epochs_task1.s1=7".into(), "name=b".into(), "x.y=[1, 2]".into()]).unwrap();
        let t: toml::Table = out.parse().unwrap();
        assert_eq!(t["epochs_task1"]["s1"].as_integer(), Some(7));
        assert_eq!(t["name"].as_str(), Some("b"));
        assert_eq!(t["x"]["y"].as_array().unwrap().len(), 2);
        assert!(apply_overrides(text, &["novalue".into()]).is_err());
        assert!(apply_overrides(text, &["name.z=1".into()]).is_err());
    }

    #[test]
    fn out_dir_precedence() {
        let cfg = Path::new("cfg");
        assert_eq!(resolve_out_dir(cfg, None, None), PathBuf::from("cfg"));
        assert_eq!(resolve_out_dir(cfg, Some(Path::new("flag")), None), PathBuf::from("flag"));
        assert_eq!(
            resolve_out_dir(cfg, Some(Path::new("flag")), Some("env".into())),
            PathBuf::from("env")
        );
        assert_eq!(resolve_out_dir(cfg, None, Some("".into())), PathBuf::from("cfg"));
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(main_with_args(["snncl"]), 2);
        assert_eq!(main_with_args(["snncl", "run"]), 2);
        assert_eq!(main_with_args(["snncl", "run", "--config", "/nonexistent.toml"]), 2);
        assert_eq!(main_with_args(["snncl", "bogus"]), 2);
    }
}
