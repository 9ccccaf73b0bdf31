//! Loads MNIST and Fashion-MNIST IDX files, draws balanced subsets, mixes and
//! replicates them.
//!
//! cargo run --release --example idx_datasets -- [DATA_DIR]
//!
//! `DATA_DIR` holds `mnist/` and `fashion/` with the four standard IDX files
//! each (default `data`).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spiking_continual::data::{mix_and_shuffle, replicate_to, subset_balanced, DatasetManifest, SourceFormat, TaskSource};

fn main() -> spiking_continual::Result<()> {
    let data = std::env::args().nth(1).unwrap_or_else(|| "data".into());
    let mnist = TaskSource::idx_dir("mnist", format!("{data}/mnist"), SourceFormat::Digits);
    let fashion = TaskSource::idx_dir("fashion", format!("{data}/fashion"), SourceFormat::Digits);
    let mut rng = ChaCha8Rng::seed_from_u64(1);

    let digits = mnist.load_train()?;
    println!("{}: {} images, classes {:?}", digits.name, digits.len(), digits.class_histogram());
    let small = subset_balanced(&digits, 24, 10, &mut rng)?;
    let clothes = subset_balanced(&fashion.load_train()?, 240, 10, &mut rng)?;
    println!("balanced subsets: {} digits, {} clothes", small.len(), clothes.len());

    let replicated = replicate_to(&small, clothes.len(), &mut rng)?;
    println!("digit memory replicated to {} samples: {:?}", replicated.len(), replicated.class_histogram());

    let mixed = mix_and_shuffle(&[&replicated, &clothes], &mut rng)?;
    let head: Vec<u8> = (0..12).map(|i| mixed.label(i)).collect();
    println!("mixed set of {}, first labels {head:?}", mixed.len());

    let manifest = DatasetManifest::describe(&small, vec![mnist.train_images.clone()], 1, 24);
    println!("{}", toml::to_string(&manifest).expect("manifest serializes"));
    Ok(())
}
