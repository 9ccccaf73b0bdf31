//! End-to-end runs on small synthetic IDX datasets.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spiking_continual::checkpoint::{load_bounds, load_network, save_network};
use spiking_continual::cli::main_with_args;
use spiking_continual::continual::{build_episodic_memory, langevin_sample_features, LangevinConfig};
use spiking_continual::data::{write_idx, Dataset, PIXELS, SIDE};
use spiking_continual::experiment::{
    metrics_from_csv, run_sequential, weight_histogram, ExperimentConfig, Method, Session,
};
use spiking_continual::plasticity::BatchStats;

/// Ten classes of crossing strokes at class-specific positions.
fn synthetic(name: &str, per_class: usize, diagonal: bool, rng: &mut ChaCha8Rng) -> Dataset {
    let mut ds = Dataset::empty(name);
    for i in 0..per_class * 10 {
        let c = (i % 10) as u8;
        let mut img = vec![0u8; PIXELS];
        let jitter = rng.random_range(0..2usize);
        let a = 3 + 2 * usize::from(c) + jitter;
        for t in 4..24 {
            let (y1, x1) = if diagonal { (t, (t + a) % SIDE) } else { (a, t) };
            let (y2, x2) = if diagonal { (t, (SIDE - 1 + a - t) % SIDE) } else { (t, SIDE - 1 - a) };
            img[y1 * SIDE + x1] = 255;
            img[y2 * SIDE + x2] = 200;
        }
        for p in img.iter_mut() {
            if rng.random_bool(0.02) {
                *p = rng.random_range(0..=255);
            }
        }
        ds.push(&img, c);
    }
    ds
}

fn write_task(dir: &Path, diagonal: bool, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    std::fs::create_dir_all(dir).unwrap();
    let train = synthetic("train", 12, diagonal, &mut rng);
    let test = synthetic("test", 6, diagonal, &mut rng);
    write_idx(&train, dir.join("train-images-idx3-ubyte"), dir.join("train-labels-idx1-ubyte")).unwrap();
    write_idx(&test, dir.join("t10k-images-idx3-ubyte"), dir.join("t10k-labels-idx1-ubyte")).unwrap();
}

fn tiny(data: &Path, method: Method) -> ExperimentConfig {
    write_task(&data.join("mnist"), false, 11);
    write_task(&data.join("fashion"), true, 12);
    let mut cfg = ExperimentConfig::desk(data, method);
    cfg.task1.train_per_class = 12;
    cfg.task1.test_per_class = 6;
    cfg.task2.train_per_class = 12;
    cfg.task2.test_per_class = 6;
    cfg.heldout_per_class = 4;
    cfg.epochs_task1.s1 = 1;
    cfg.epochs_task1.s2 = 1;
    cfg.epochs_task1.s3 = 3;
    cfg.epochs_task2.s1 = 1;
    cfg.epochs_task2.s2 = 1;
    cfg.epochs_task2.s3 = 2;
    cfg.seeds = vec![7];
    cfg
}

#[test]
fn freeze_keeps_masked_readout_weights() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), Method::Freeze { fraction: 0.2 });
    let mut session = Session::new(cfg.clone()).unwrap();
    let run = session.run(&cfg.method, 7).unwrap();
    let layer = run.final_net.output_layer();
    let mask = run.mask.unwrap();
    let before = &run.task1_net.weights(layer).data;
    let after = &run.final_net.weights(layer).data;
    assert!(mask.count() > 0);
    for (i, frozen) in mask.frozen.iter().enumerate() {
        if *frozen {
            assert_eq!(before[i].to_bits(), after[i].to_bits());
        }
    }
    assert_ne!(before, after);
    assert_eq!(run.log.rows.len(), cfg.epochs_task2.s3 + 1);
}

#[test]
fn langevin_run_stays_inside_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let lang = LangevinConfig {
        n_epochs_max: 2,
        n_demix: 10,
        a_min: 0.01,
        sigma: 1e-3,
        eval_per_class: 4,
        ..LangevinConfig::default()
    };
    let cfg = tiny(dir.path(), Method::Langevin(lang));
    let mut session = Session::new(cfg.clone()).unwrap();
    let run = session.run(&cfg.method, 7).unwrap();
    let bounds = run.bounds.unwrap();
    let layer = run.final_net.output_layer();
    assert!(bounds.contains(run.final_net.weights(layer)));
    let outcome = run.langevin.unwrap();
    assert!(!outcome.terminated_early);
    assert_eq!(outcome.store.len(), outcome.steps / 10);
    assert!(bounds.lower.iter().zip(&bounds.upper).all(|(l, u)| 0.2 <= *l && l <= u && *u <= 0.8));
}

#[test]
fn snapshot_cadence_without_early_stop() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), Method::Vanilla);
    let mut session = Session::new(cfg.clone()).unwrap();
    let stage = session.task1(&Method::Vanilla, 7).unwrap();
    let labels = &stage.task1.train.labels;
    for n_demix in [1, 7, 25] {
        let lang = LangevinConfig {
            n_epochs_max: 2,
            n_demix,
            a_min: 1e-9,
            ..LangevinConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = langevin_sample_features(
            &stage.net,
            (&stage.task1_train_features, labels),
            (&stage.task1_test_features, &stage.task1.test.labels),
            &cfg.learning.readout,
            BatchStats::chance(10),
            0,
            &lang,
            &mut rng,
        )
        .unwrap();
        assert_eq!(out.steps, 2 * labels.len());
        assert_eq!(out.store.len(), out.steps / n_demix);
    }
}

#[test]
fn sequential_runs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), Method::Fewshot { per_class: 2 });
    let a = run_sequential(&cfg).unwrap();
    let b = run_sequential(&cfg).unwrap();
    assert_eq!(a, b);
    let rows = &a[0].rows;
    assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.task1_test) && (0.0..=1.0).contains(&r.task2_test)));
}

#[test]
fn memory_buffer_holds_only_requested_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let task = synthetic("digits", 12, false, &mut rng);
    let memory = build_episodic_memory(&task, 3, 10, &mut rng).unwrap();
    assert_eq!(memory.samples.len(), 30);
    assert!(memory.samples.class_histogram().values().all(|&n| n == 3));
}

fn run_cli(args: &[&str]) -> i32 {
    let mut argv = vec!["snncl"];
    argv.extend_from_slice(args);
    main_with_args(argv)
}

#[test]
fn cli_commands_write_their_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), Method::Vanilla);
    let config = dir.path().join("tiny.toml");
    std::fs::write(&config, cfg.to_toml().unwrap()).unwrap();
    let config = config.to_str().unwrap();
    let out = |name: &str| dir.path().join(name).to_str().unwrap().to_string();

    assert_eq!(run_cli(&[]), 2);
    assert_eq!(run_cli(&["train", "--config", config, "--bogus"]), 2);
    assert_eq!(run_cli(&["train", "--config", "/nonexistent.toml"]), 2);

    let train = out("train");
    assert_eq!(run_cli(&["train", "--config", config, "--seed", "7", "--out-dir", &train]), 0);
    let checkpoint = format!("{train}/task1_seed7.snnw");
    let net = load_network(&checkpoint).unwrap();
    assert!(Path::new(&format!("{train}/manifest.toml")).exists());

    let prune = out("prune");
    let args = ["prune-sweep", "--config", config, "--out-dir", &prune, "--checkpoint", &checkpoint, "--fractions", "0,0.5,0.9"];
    assert_eq!(run_cli(&args), 0);
    let csv = std::fs::read_to_string(format!("{prune}/prune_seed7.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3);

    let hist = out("hist");
    let args = ["histogram", "--config", config, "--out-dir", &hist, "--checkpoint", &checkpoint, "--bins", "6"];
    assert_eq!(run_cli(&args), 0);
    let csv = std::fs::read_to_string(format!("{hist}/histogram_seed7.csv")).unwrap();
    let mass: Vec<f64> = csv.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    let lib = weight_histogram(&net, net.output_layer(), 6).unwrap();
    assert_eq!(mass, lib.mass);

    let run = out("run");
    let args = ["run", "--config", config, "--seed", "7", "--out-dir", &run];
    assert_eq!(run_cli(&args), 0);
    let logs = metrics_from_csv(&std::fs::read_to_string(format!("{run}/metrics.csv")).unwrap()).unwrap();
    assert_eq!(logs.len(), 1);
    assert_eq!(logs[0].rows.len(), cfg.epochs_task2.s3 + 1);

    let lang = out("langevin");
    let args = [
        "langevin-sample", "--config", config, "--out-dir", &lang, "--checkpoint", &checkpoint,
        "--set", "method.kind=langevin", "--set", "method.n_epochs_max=1", "--set", "method.n_demix=5",
        "--set", "method.a_min=0.001",
    ];
    assert_eq!(run_cli(&args), 0);
    let bounds = load_bounds(format!("{lang}/bounds_seed7.snnw")).unwrap();
    assert_eq!(bounds.lower.len(), net.weights(net.output_layer()).len());

    let report = out("report");
    let metrics = format!("{run}/metrics.csv");
    assert_eq!(run_cli(&["report", "--config", config, "--out-dir", &report, "--input", &metrics]), 0);
    assert!(Path::new(&format!("{report}/summary.csv")).exists());
}

#[test]
fn pseudo_gen_fails_on_unreachable_quota() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), Method::Vanilla);
    let config = dir.path().join("tiny.toml");
    std::fs::write(&config, cfg.to_toml().unwrap()).unwrap();
    // the first group always wins, so nine classes never get a pattern
    let mut session = Session::new(cfg.clone()).unwrap();
    let mut net = session.task1(&Method::Vanilla, 7).unwrap().net.clone();
    let layer = net.output_layer();
    let w = net.weights_mut(layer);
    let fan_in = w.fan_in();
    for (i, v) in w.data.iter_mut().enumerate() {
        *v = if i / fan_in < 20 { 0.8 } else { 0.2 };
    }
    let checkpoint = dir.path().join("biased.snnw");
    save_network(&net, &checkpoint).unwrap();
    let out = dir.path().join("pseudo");
    let args = [
        "pseudo-gen",
        "--config",
        config.to_str().unwrap(),
        "--out-dir",
        out.to_str().unwrap(),
        "--checkpoint",
        checkpoint.to_str().unwrap(),
        "--per-class",
        "1",
        "--attempts-per-sample",
        "5",
    ];
    assert_eq!(run_cli(&args), 1);
}
