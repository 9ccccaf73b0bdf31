use std::f64::consts::PI;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, SIDE};
use crate::encoding::{Encoder, Image};
use crate::error::{Error, Result};
use crate::snn::{decide, forward, NetworkState};

/// Random-bar pseudo-pattern generator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BarPatternConfig {
    pub image_size: usize,
    pub min_bars: usize,
    pub max_bars: usize,
    /// Bar thickness in pixels, drawn uniformly from `[min_width, max_width]`.
    pub min_width: f64,
    pub max_width: f64,
    /// Bar length in pixels, drawn uniformly from `[min_length, max_length]`.
    pub min_length: f64,
    pub max_length: f64,
    pub intensity: f64,
}

impl Default for BarPatternConfig {
    fn default() -> Self {
        Self {
            image_size: SIDE,
            min_bars: 1,
            max_bars: 3,
            min_width: 1.0,
            max_width: 4.0,
            min_length: 8.0,
            max_length: 28.0,
            intensity: 1.0,
        }
    }
}

impl BarPatternConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1 <= self.min_bars && self.min_bars <= self.max_bars && self.max_bars <= 3) {
            return Err(Error::Config(format!(
                "bar count range {}..={} must lie in 1..=3",
                self.min_bars, self.max_bars
            )));
        }
        if !(self.min_width >= 1.0 && self.min_width <= self.max_width) {
            return Err(Error::Config("bar width range must start at >= 1 pixel".into()));
        }
        if !(self.min_length >= 1.0 && self.min_length <= self.max_length) {
            return Err(Error::Config("bar length range must start at >= 1 pixel".into()));
        }
        if !(0.0..=1.0).contains(&self.intensity) || self.image_size == 0 {
            return Err(Error::Config("intensity must be in [0, 1] and the image non-empty".into()));
        }
        Ok(())
    }
}

/// One rendered rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bar {
    pub center: (f64, f64),
    pub angle: f64,
    pub width: f64,
    pub length: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarPattern {
    pub image: Image,
    pub bars: Vec<Bar>,
}

/// Draws 1-3 randomly placed, rotated bars on a black background.
pub fn generate_bar_pattern<R: Rng + ?Sized>(cfg: &BarPatternConfig, rng: &mut R) -> Result<BarPattern> {
    cfg.validate()?;
    let n = cfg.image_size;
    let count = rng.random_range(cfg.min_bars..=cfg.max_bars);
    let bars: Vec<Bar> = (0..count)
        .map(|_| Bar {
            center: (rng.random_range(0.0..n as f64), rng.random_range(0.0..n as f64)),
            angle: rng.random_range(0.0..PI),
            width: rng.random_range(cfg.min_width..=cfg.max_width),
            length: rng.random_range(cfg.min_length..=cfg.max_length),
        })
        .collect();
    let mut pixels = vec![0.0; n * n];
    for bar in &bars {
        let (s, c) = bar.angle.sin_cos();
        for y in 0..n {
            for x in 0..n {
                let dx = x as f64 + 0.5 - bar.center.0;
                let dy = y as f64 + 0.5 - bar.center.1;
                let along = dx * c + dy * s;
                let across = -dx * s + dy * c;
                if along.abs() <= bar.length / 2.0 && across.abs() <= bar.width / 2.0 {
                    pixels[y * n + x] = cfg.intensity;
                }
            }
        }
    }
    Ok(BarPattern {
        image: Image::new(n, n, pixels)?,
        bars,
    })
}

/// Labels random bar patterns with the network's own decisions until every
/// class holds `per_class` samples. Images are stored as bytes and labelled
/// from those bytes, so re-classifying a stored sample reproduces its label.
pub fn build_pseudo_dataset<R: Rng + ?Sized>(
    net: &NetworkState,
    encoder: &Encoder,
    per_class: usize,
    cfg: &BarPatternConfig,
    rng: &mut R,
    max_attempts: usize,
) -> Result<Dataset> {
    cfg.validate()?;
    let classes = net.groups.classes;
    let mut counts = vec![0usize; classes];
    let mut out = Dataset::empty("pseudo");
    if per_class == 0 {
        return Ok(out);
    }
    const BATCH: usize = 64;
    let mut attempts = 0;
    while counts.iter().any(|&c| c < per_class) {
        if attempts >= max_attempts {
            let starved = (0..classes)
                .filter(|&c| counts[c] < per_class)
                .map(|c| c as u8)
                .collect();
            return Err(Error::QuotaUnreachable { attempts, starved });
        }
        let batch = BATCH.min(max_attempts - attempts);
        let images = (0..batch)
            .map(|_| generate_bar_pattern(cfg, rng).map(|p| p.image.to_bytes()))
            .collect::<Result<Vec<_>>>()?;
        let labels = images
            .par_iter()
            .map(|bytes| classify_bytes(net, encoder, cfg.image_size, bytes))
            .collect::<Result<Vec<_>>>()?;
        for (bytes, label) in images.iter().zip(labels) {
            attempts += 1;
            if counts[label] < per_class {
                counts[label] += 1;
                out.push(bytes, label as u8);
            }
        }
    }
    Ok(out)
}

fn classify_bytes(net: &NetworkState, encoder: &Encoder, side: usize, bytes: &[u8]) -> Result<usize> {
    let wave = encoder.encode(&Image::from_bytes(side, side, bytes))?;
    let outs = forward(&wave, net)?;
    Ok(decide(outs.last().expect("non-empty network"), net.groups)?.class_label)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn same_seed_same_pattern() {
        let cfg = BarPatternConfig::default();
        let a = generate_bar_pattern(&cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = generate_bar_pattern(&cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pixels_in_unit_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let p = generate_bar_pattern(&BarPatternConfig::default(), &mut rng).unwrap();
            assert_eq!((p.image.height, p.image.width), (28, 28));
            assert!(p.image.pixels.iter().all(|v| (0.0..=1.0).contains(v)));
            assert!(p.image.pixels.iter().any(|&v| v > 0.0));
        }
    }

    #[test]
    fn zero_width_rejected() {
        let cfg = BarPatternConfig {
            min_width: 0.0,
            ..BarPatternConfig::default()
        };
        assert!(generate_bar_pattern(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
