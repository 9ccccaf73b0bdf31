//! IDX dataset loading and task construction.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::Image;
use crate::error::{Error, Result};

pub const IMAGE_MAGIC: u32 = 2051;
pub const LABEL_MAGIC: u32 = 2049;
pub const SIDE: usize = 28;
pub const PIXELS: usize = SIDE * SIDE;

/// Labeled 28x28 grayscale images stored as raw bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub name: String,
    pub images: Vec<u8>,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, images: Vec<u8>, labels: Vec<u8>) -> Result<Self> {
        if images.len() != labels.len() * PIXELS {
            return Err(Error::CountMismatch {
                images: images.len() / PIXELS,
                labels: labels.len(),
            });
        }
        Ok(Self {
            name: name.into(),
            images,
            labels,
        })
    }

    pub fn empty(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            images: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_bytes(&self, i: usize) -> &[u8] {
        &self.images[i * PIXELS..(i + 1) * PIXELS]
    }

    pub fn image(&self, i: usize) -> Image {
        Image::from_bytes(SIDE, SIDE, self.image_bytes(i))
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn push(&mut self, bytes: &[u8], label: u8) {
        assert_eq!(bytes.len(), PIXELS, "images are 28x28");
        self.images.extend_from_slice(bytes);
        self.labels.push(label);
    }

    /// Samples `indices` in the given order.
    pub fn select(&self, name: impl Into<String>, indices: &[usize]) -> Dataset {
        let mut out = Dataset::empty(name);
        out.images.reserve(indices.len() * PIXELS);
        out.labels.reserve(indices.len());
        for &i in indices {
            out.push(self.image_bytes(i), self.labels[i]);
        }
        out
    }

    /// Count of samples per label value.
    pub fn class_histogram(&self) -> BTreeMap<u8, usize> {
        let mut h = BTreeMap::new();
        for &l in &self.labels {
            *h.entry(l).or_insert(0) += 1;
        }
        h
    }

    pub fn indices_by_class(&self) -> BTreeMap<u8, Vec<usize>> {
        let mut by = BTreeMap::<u8, Vec<usize>>::new();
        for (i, &l) in self.labels.iter().enumerate() {
            by.entry(l).or_default().push(i);
        }
        by
    }
}

/// Which labels an IDX label file may contain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSpace {
    /// 0..=9
    #[default]
    Digits,
    /// Any byte; remap afterwards.
    Any,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct IdxOptions {
    pub labels: LabelSpace,
    /// EMNIST stores images transposed relative to MNIST.
    pub transpose: bool,
}

impl IdxOptions {
    pub fn emnist() -> Self {
        Self {
            labels: LabelSpace::Any,
            transpose: true,
        }
    }
}

fn read_u32(bytes: &[u8], offset: usize) -> u32 {
    u32::from_be_bytes(bytes[offset..offset + 4].try_into().unwrap())
}

fn check_header(path: &Path, bytes: &[u8], magic: u32, header: usize) -> Result<()> {
    if bytes.len() < 4 {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            needed: header,
            available: bytes.len(),
        });
    }
    let found = read_u32(bytes, 0);
    if found != magic {
        return Err(Error::WrongMagic {
            path: path.to_path_buf(),
            expected: magic,
            found,
        });
    }
    if bytes.len() < header {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            needed: header,
            available: bytes.len(),
        });
    }
    Ok(())
}

/// Loads an MNIST-style image/label file pair with digit labels.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    load_idx_with(images_path, labels_path, IdxOptions::default())
}

pub fn load_idx_with(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    options: IdxOptions,
) -> Result<Dataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let ib = fs::read(ip).map_err(|e| Error::io(ip, e))?;
    let lb = fs::read(lp).map_err(|e| Error::io(lp, e))?;

    check_header(ip, &ib, IMAGE_MAGIC, 16)?;
    let count = read_u32(&ib, 4) as usize;
    let (rows, cols) = (read_u32(&ib, 8) as usize, read_u32(&ib, 12) as usize);
    if (rows, cols) != (SIDE, SIDE) {
        return Err(Error::Dimensions {
            path: ip.to_path_buf(),
            rows,
            cols,
        });
    }
    let needed = 16 + count * PIXELS;
    if ib.len() < needed {
        return Err(Error::Truncated {
            path: ip.to_path_buf(),
            needed,
            available: ib.len(),
        });
    }

    check_header(lp, &lb, LABEL_MAGIC, 8)?;
    let label_count = read_u32(&lb, 4) as usize;
    if label_count != count {
        return Err(Error::CountMismatch {
            images: count,
            labels: label_count,
        });
    }
    if lb.len() < 8 + count {
        return Err(Error::Truncated {
            path: lp.to_path_buf(),
            needed: 8 + count,
            available: lb.len(),
        });
    }
    let labels = lb[8..8 + count].to_vec();
    if options.labels == LabelSpace::Digits {
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l > 9) {
            return Err(Error::LabelOutOfRange {
                index,
                label: u32::from(label),
            });
        }
    }

    let mut images = ib[16..needed].to_vec();
    if options.transpose {
        for img in images.chunks_exact_mut(PIXELS) {
            for y in 0..SIDE {
                for x in y + 1..SIDE {
                    img.swap(y * SIDE + x, x * SIDE + y);
                }
            }
        }
    }
    let name = ip
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    Dataset::new(name, images, labels)
}

/// Writes `ds` as an IDX image/label file pair.
pub fn write_idx(ds: &Dataset, images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<()> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let n = ds.len() as u32;
    let mut ib = Vec::with_capacity(16 + ds.images.len());
    for v in [IMAGE_MAGIC, n, SIDE as u32, SIDE as u32] {
        ib.extend_from_slice(&v.to_be_bytes());
    }
    ib.extend_from_slice(&ds.images);
    let mut lb = Vec::with_capacity(8 + ds.len());
    for v in [LABEL_MAGIC, n] {
        lb.extend_from_slice(&v.to_be_bytes());
    }
    lb.extend_from_slice(&ds.labels);
    fs::write(ip, ib).map_err(|e| Error::io(ip, e))?;
    fs::write(lp, lb).map_err(|e| Error::io(lp, e))
}

/// Injective relabelling of source labels onto `0..classes`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassMap {
    pub map: BTreeMap<u8, u8>,
}

/// Capital letters forming the ten letter classes.
pub const LETTER_CLASSES: [char; 10] = ['A', 'B', 'D', 'E', 'G', 'H', 'N', 'Q', 'R', 'S'];

/// EMNIST split, which fixes where capital letters start in label space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmnistSplit {
    /// `letters`: A = 1 ... Z = 26 (upper and lower case merged).
    Letters,
    /// `byclass` / `bymerge` / `balanced`: digits 0-9, then A = 10 ... Z = 35.
    ByClass,
}

impl ClassMap {
    pub fn new(map: BTreeMap<u8, u8>) -> Result<Self> {
        let mut seen = std::collections::BTreeSet::new();
        for &t in map.values() {
            if !seen.insert(t) {
                return Err(Error::Config(format!("class map sends two labels to {t}")));
            }
        }
        Ok(Self { map })
    }

    pub fn identity(classes: u8) -> Self {
        Self {
            map: (0..classes).map(|c| (c, c)).collect(),
        }
    }

    /// Maps the letters of [`LETTER_CLASSES`] to 0..9 in that order.
    pub fn emnist_letters(split: EmnistSplit) -> Self {
        let base = match split {
            EmnistSplit::Letters => 1,
            EmnistSplit::ByClass => 10,
        };
        Self {
            map: LETTER_CLASSES
                .iter()
                .enumerate()
                .map(|(i, &c)| (base + (c as u8 - b'A'), i as u8))
                .collect(),
        }
    }

    pub fn get(&self, label: u8) -> Option<u8> {
        self.map.get(&label).copied()
    }
}

/// Rewrites every label through `map`; fails on a label without an entry.
pub fn remap_classes(ds: &Dataset, map: &ClassMap) -> Result<Dataset> {
    let labels = ds
        .labels
        .iter()
        .map(|&l| map.get(l).ok_or(Error::UnmappedLabel(u32::from(l))))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        name: ds.name.clone(),
        images: ds.images.clone(),
        labels,
    })
}

/// Keeps only samples whose label is mapped, then remaps them.
pub fn select_classes(ds: &Dataset, map: &ClassMap) -> Dataset {
    let keep: Vec<usize> = (0..ds.len()).filter(|&i| map.get(ds.labels[i]).is_some()).collect();
    let mut out = ds.select(ds.name.clone(), &keep);
    for l in &mut out.labels {
        *l = map.get(*l).expect("filtered");
    }
    out
}

/// `per_class` samples of each class in `0..classes`, drawn without
/// replacement, then shuffled.
pub fn subset_balanced<R: Rng + ?Sized>(ds: &Dataset, per_class: usize, classes: u8, rng: &mut R) -> Result<Dataset> {
    let by = ds.indices_by_class();
    let mut picked = Vec::with_capacity(per_class * classes as usize);
    for c in 0..classes {
        let pool = by.get(&c).map(Vec::as_slice).unwrap_or(&[]);
        if pool.len() < per_class {
            return Err(Error::StarvedClass {
                class: c,
                available: pool.len(),
                requested: per_class,
            });
        }
        let mut pool = pool.to_vec();
        let (chosen, _) = pool.partial_shuffle(rng, per_class);
        picked.extend_from_slice(chosen);
    }
    picked.shuffle(rng);
    Ok(ds.select(ds.name.clone(), &picked))
}

/// Concatenates `datasets` and applies a seeded uniform permutation.
pub fn mix_and_shuffle<R: Rng + ?Sized>(datasets: &[&Dataset], rng: &mut R) -> Result<Dataset> {
    let mut all = Dataset::empty(datasets.iter().map(|d| d.name.as_str()).collect::<Vec<_>>().join("+"));
    for d in datasets {
        if d.images.len() != d.labels.len() * PIXELS {
            return Err(Error::Shape {
                expected: "28x28 images".into(),
                actual: format!("{} bytes for {} labels", d.images.len(), d.labels.len()),
            });
        }
        all.images.extend_from_slice(&d.images);
        all.labels.extend_from_slice(&d.labels);
    }
    let mut order: Vec<usize> = (0..all.len()).collect();
    order.shuffle(rng);
    Ok(all.select(all.name.clone(), &order))
}

/// Repeats `ds` whole as often as fits in `target`, then tops up with seeded
/// draws without replacement, taken round-robin over classes so a balanced
/// input stays balanced within one sample per class.
pub fn replicate_to<R: Rng + ?Sized>(ds: &Dataset, target: usize, rng: &mut R) -> Result<Dataset> {
    if ds.is_empty() {
        return Err(Error::InvalidInput("cannot replicate an empty dataset".into()));
    }
    let n = ds.len();
    let mut order: Vec<usize> = (0..target / n).flat_map(|_| 0..n).collect();
    let extra = target % n;
    if extra > 0 {
        let mut groups: Vec<Vec<usize>> = ds.indices_by_class().into_values().collect();
        for g in &mut groups {
            g.shuffle(rng);
        }
        groups.shuffle(rng);
        let mut round = 0;
        while order.len() < target {
            for g in &groups {
                if order.len() == target {
                    break;
                }
                if let Some(&i) = g.get(round) {
                    order.push(i);
                }
            }
            round += 1;
        }
    }
    Ok(ds.select(ds.name.clone(), &order))
}

/// Provenance sidecar written next to derived datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub source_files: Vec<PathBuf>,
    pub seed: u64,
    pub per_class: usize,
    pub count: usize,
    pub class_counts: BTreeMap<String, usize>,
}

impl DatasetManifest {
    pub fn describe(ds: &Dataset, source_files: Vec<PathBuf>, seed: u64, per_class: usize) -> Self {
        Self {
            name: ds.name.clone(),
            source_files,
            seed,
            per_class,
            count: ds.len(),
            class_counts: ds
                .class_histogram()
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
        }
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Parse(e.to_string()))
    }
}

/// Where a task's train/test IDX pairs live.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSource {
    pub name: String,
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
    #[serde(default)]
    pub format: SourceFormat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "split")]
pub enum SourceFormat {
    /// Ten classes labelled 0-9 (MNIST, Fashion-MNIST).
    #[default]
    Digits,
    /// EMNIST letters restricted to [`LETTER_CLASSES`].
    EmnistLetters(EmnistSplit),
}

impl TaskSource {
    /// Standard file names under `dir`.
    pub fn idx_dir(name: &str, dir: impl AsRef<Path>, format: SourceFormat) -> Self {
        let dir = dir.as_ref();
        Self {
            name: name.to_string(),
            train_images: dir.join("train-images-idx3-ubyte"),
            train_labels: dir.join("train-labels-idx1-ubyte"),
            test_images: dir.join("t10k-images-idx3-ubyte"),
            test_labels: dir.join("t10k-labels-idx1-ubyte"),
            format,
        }
    }

    fn load_pair(&self, images: &Path, labels: &Path) -> Result<Dataset> {
        let mut ds = match self.format {
            SourceFormat::Digits => load_idx(images, labels)?,
            SourceFormat::EmnistLetters(split) => {
                let raw = load_idx_with(images, labels, IdxOptions::emnist())?;
                select_classes(&raw, &ClassMap::emnist_letters(split))
            }
        };
        ds.name = self.name.clone();
        Ok(ds)
    }

    pub fn load_train(&self) -> Result<Dataset> {
        self.load_pair(&self.train_images, &self.train_labels)
    }

    pub fn load_test(&self) -> Result<Dataset> {
        self.load_pair(&self.test_images, &self.test_labels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy(labels: &[u8]) -> Dataset {
        let mut ds = Dataset::empty("toy");
        for (i, &l) in labels.iter().enumerate() {
            ds.push(&[i as u8; PIXELS], l);
        }
        ds
    }

    #[test]
    fn emnist_letter_d_is_class_two() {
        let m = ClassMap::emnist_letters(EmnistSplit::Letters);
        assert_eq!(m.get(4), Some(2));
        assert_eq!(m.get(1), Some(0));
        assert_eq!(m.get(3), None);
        let m = ClassMap::emnist_letters(EmnistSplit::ByClass);
        assert_eq!(m.get(10 + 3), Some(2));
    }

    #[test]
    fn remap_identity_and_unmapped() {
        let ds = toy(&[0, 3, 9]);
        assert_eq!(remap_classes(&ds, &ClassMap::identity(10)).unwrap(), ds);
        assert!(matches!(
            remap_classes(&ds, &ClassMap::identity(5)),
            Err(Error::UnmappedLabel(9))
        ));
    }

    #[test]
    fn replicate_seven_to_ten() {
        let ds = toy(&[0, 1, 2, 3, 4, 5, 6]);
        let out = replicate_to(&ds, 10, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(out.len(), 10);
        assert_eq!(&out.labels[..7], &ds.labels[..]);
        let h = out.class_histogram();
        assert!(h.values().all(|&c| c == 1 || c == 2));
        assert_eq!(h.values().filter(|&&c| c == 2).count(), 3);
    }

    #[test]
    fn replicate_rejects_empty() {
        assert!(replicate_to(&Dataset::empty("e"), 3, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn balanced_subset() {
        let labels: Vec<u8> = (0..100).map(|i| (i % 10) as u8).collect();
        let ds = toy(&labels);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let one = subset_balanced(&ds, 1, 10, &mut rng).unwrap();
        assert_eq!(one.len(), 10);
        assert!(one.class_histogram().values().all(|&c| c == 1));
        assert!(subset_balanced(&ds, 0, 10, &mut rng).unwrap().is_empty());
        assert!(matches!(
            subset_balanced(&ds, 11, 10, &mut rng),
            Err(Error::StarvedClass { class: 0, .. })
        ));
    }
}
