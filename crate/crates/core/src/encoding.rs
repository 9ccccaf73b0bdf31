//! Retina-like front end: difference-of-Gaussian filtering, local contrast
//! normalization and intensity-to-latency coding.
//!
//! An [`Image`] goes through [`dog_filter`] (on- and off-center channels per
//! scale), [`local_normalize`] and [`intensity_to_latency`], producing a
//! [`SpikeWave`] in which every supra-threshold position spikes exactly once
//! and stronger responses spike earlier.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::quantile_sorted;

/// Time bin of a spike. [`NEVER`] marks a position that does not fire.
pub type SpikeTime = u16;

pub const NEVER: SpikeTime = SpikeTime::MAX;

const NORM_EPSILON: f64 = 1e-10;

/// Grayscale image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(Error::Shape {
                expected: format!("{} pixels", height * width),
                actual: format!("{} pixels", pixels.len()),
            });
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            pixels: vec![value; height * width],
        }
    }

    pub fn from_bytes(height: usize, width: usize, bytes: &[u8]) -> Self {
        Self {
            height,
            width,
            pixels: bytes.iter().map(|&b| f64::from(b) / 255.0).collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.pixels[y * self.width + x]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DogScale {
    pub window: usize,
    pub sigma_center: f64,
    pub sigma_surround: f64,
}

impl DogScale {
    pub fn new(window: usize, sigma_center: f64, sigma_surround: f64) -> Self {
        Self {
            window,
            sigma_center,
            sigma_surround,
        }
    }
}

/// How the latency coder decides which positions may fire.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum FiringThreshold {
    /// Quantile (in `[0, 1]`) of the nonzero normalized intensities of each image.
    Percentile(f64),
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub dog_scales: Vec<DogScale>,
    pub time_bins: usize,
    pub firing_threshold: FiringThreshold,
    /// Zero padding applied around the image before filtering.
    pub padding: usize,
    /// Side of the square window used by [`local_normalize`].
    pub norm_window: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            dog_scales: vec![
                DogScale::new(3, 3.0 / 9.0, 6.0 / 9.0),
                DogScale::new(7, 7.0 / 9.0, 14.0 / 9.0),
                DogScale::new(13, 13.0 / 9.0, 26.0 / 9.0),
            ],
            time_bins: 15,
            firing_threshold: FiringThreshold::Percentile(0.5),
            padding: 6,
            norm_window: 17,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dog_scales.is_empty() {
            return Err(Error::Config("at least one DoG scale is required".into()));
        }
        for s in &self.dog_scales {
            if s.window < 3 || s.window % 2 == 0 {
                return Err(Error::Config(format!(
                    "DoG window {} must be odd and >= 3",
                    s.window
                )));
            }
            if !(s.sigma_center > 0.0 && s.sigma_center < s.sigma_surround) {
                return Err(Error::Config(format!(
                    "DoG sigmas ({}, {}) must satisfy 0 < center < surround",
                    s.sigma_center, s.sigma_surround
                )));
            }
        }
        if self.time_bins == 0 || self.time_bins >= usize::from(NEVER) {
            return Err(Error::Config(format!(
                "time_bins {} out of range",
                self.time_bins
            )));
        }
        if self.norm_window == 0 || self.norm_window % 2 == 0 {
            return Err(Error::Config(format!(
                "normalization window {} must be odd",
                self.norm_window
            )));
        }
        if let FiringThreshold::Percentile(q) = self.firing_threshold {
            if !(0.0..=1.0).contains(&q) {
                return Err(Error::Config(format!("threshold percentile {q} not in [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        2 * self.dog_scales.len()
    }

    fn max_window(&self) -> usize {
        self.dog_scales.iter().map(|s| s.window).max().unwrap_or(1)
    }

    /// Spatial size of the filtered maps for an `h x w` input.
    pub fn output_size(&self, height: usize, width: usize) -> Option<(usize, usize)> {
        let k = self.max_window();
        let ph = height + 2 * self.padding;
        let pw = width + 2 * self.padding;
        (ph >= k && pw >= k).then(|| (ph - k + 1, pw - k + 1))
    }
}

/// Real-valued channel stack, channel-major then row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredImage {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl FilteredImage {
    pub fn new(channels: usize, height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != channels * height * width {
            return Err(Error::Shape {
                expected: format!("{channels}x{height}x{width}"),
                actual: format!("{} values", values.len()),
            });
        }
        Ok(Self {
            channels,
            height,
            width,
            values,
        })
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.values[(c * self.height + y) * self.width + x]
    }

    fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.values[c * n..(c + 1) * n]
    }
}

/// Binary spike tensor over `time_bins x channels x height x width`, stored
/// as one latency per position.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SpikeWave {
    pub time_bins: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub latency: Vec<SpikeTime>,
}

impl SpikeWave {
    pub fn silent(time_bins: usize, channels: usize, height: usize, width: usize) -> Self {
        Self {
            time_bins,
            channels,
            height,
            width,
            latency: vec![NEVER; channels * height * width],
        }
    }

    pub fn from_latency(
        time_bins: usize,
        channels: usize,
        height: usize,
        width: usize,
        latency: Vec<SpikeTime>,
    ) -> Result<Self> {
        if latency.len() != channels * height * width {
            return Err(Error::Shape {
                expected: format!("{channels}x{height}x{width}"),
                actual: format!("{} latencies", latency.len()),
            });
        }
        if let Some(t) = latency
            .iter()
            .find(|&&t| t != NEVER && usize::from(t) >= time_bins)
        {
            return Err(Error::InvalidInput(format!(
                "spike time {t} outside {time_bins} time bins"
            )));
        }
        Ok(Self {
            time_bins,
            channels,
            height,
            width,
            latency,
        })
    }

    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn latency_at(&self, c: usize, y: usize, x: usize) -> SpikeTime {
        self.latency[self.index(c, y, x)]
    }

    #[inline]
    pub fn spike(&self, t: usize, c: usize, y: usize, x: usize) -> bool {
        usize::from(self.latency_at(c, y, x)) == t
    }

    /// Dense `time x channel x height x width` view (1 = spike).
    pub fn spikes(&self) -> Vec<u8> {
        let n = self.latency.len();
        let mut dense = vec![0u8; self.time_bins * n];
        for (i, &t) in self.latency.iter().enumerate() {
            if t != NEVER {
                dense[usize::from(t) * n + i] = 1;
            }
        }
        dense
    }

    pub fn spike_count(&self) -> usize {
        self.latency.iter().filter(|&&t| t != NEVER).count()
    }
}

/// Window-normalized Gaussian, row-major `window x window`.
fn gaussian_kernel(window: usize, sigma: f64) -> Vec<f64> {
    let r = (window / 2) as isize;
    let mut k = Vec::with_capacity(window * window);
    for dy in -r..=r {
        for dx in -r..=r {
            let d2 = (dy * dy + dx * dx) as f64;
            k.push((-d2 / (2.0 * sigma * sigma)).exp());
        }
    }
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// On-center DoG kernel: center Gaussian minus surround Gaussian, each
/// normalized to unit sum over the window. The off-center kernel is its negation.
pub fn dog_kernel(scale: &DogScale) -> Vec<f64> {
    let center = gaussian_kernel(scale.window, scale.sigma_center);
    let surround = gaussian_kernel(scale.window, scale.sigma_surround);
    center.iter().zip(&surround).map(|(c, s)| c - s).collect()
}

/// Signed on-center response of one scale, before the polarity split.
pub fn dog_response(image: &Image, scale: &DogScale, config: &EncoderConfig) -> Result<Vec<f64>> {
    let (oh, ow) = config
        .output_size(image.height, image.width)
        .ok_or_else(|| {
            Error::InvalidInput(format!(
                "{}x{} image too small for {}-pixel DoG window with padding {}",
                image.height,
                image.width,
                config.max_window(),
                config.padding
            ))
        })?;
    let kernel = dog_kernel(scale);
    let k = scale.window;
    // every kernel is centered on the same grid as the largest window
    let shift = config.max_window() / 2 - k / 2;
    let pad = config.padding as isize;
    let mut out = vec![0.0; oh * ow];
    for oy in 0..oh {
        for ox in 0..ow {
            let mut acc = 0.0;
            for ky in 0..k {
                let iy = (oy + shift + ky) as isize - pad;
                if iy < 0 || iy >= image.height as isize {
                    continue;
                }
                let row = iy as usize * image.width;
                for kx in 0..k {
                    let ix = (ox + shift + kx) as isize - pad;
                    if ix < 0 || ix >= image.width as isize {
                        continue;
                    }
                    acc += kernel[ky * k + kx] * image.pixels[row + ix as usize];
                }
            }
            out[oy * ow + ox] = acc;
        }
    }
    Ok(out)
}

/// Applies every DoG scale in both polarities. Channel `2s` is the on-center
/// response of scale `s`, channel `2s + 1` the off-center one; negative
/// responses are clipped to zero after the split.
pub fn dog_filter(image: &Image, config: &EncoderConfig) -> Result<FilteredImage> {
    config.validate()?;
    if image.pixels.iter().any(|p| !p.is_finite()) {
        return Err(Error::InvalidInput("image contains non-finite pixels".into()));
    }
    let (oh, ow) = config
        .output_size(image.height, image.width)
        .ok_or_else(|| Error::InvalidInput("image smaller than the DoG window".into()))?;
    let mut values = Vec::with_capacity(config.channels() * oh * ow);
    for scale in &config.dog_scales {
        let on = dog_response(image, scale, config)?;
        values.extend(on.iter().map(|&v| v.max(0.0)));
        values.extend(on.iter().map(|&v| (-v).max(0.0)));
    }
    FilteredImage::new(config.channels(), oh, ow, values)
}

/// Divides every value by the Euclidean norm of its channel's values inside a
/// `window x window` neighbourhood (zeros outside the image).
pub fn local_normalize(filtered: &FilteredImage, window: usize) -> Result<FilteredImage> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::Config(format!(
            "normalization window {window} must be odd"
        )));
    }
    let (h, w) = (filtered.height, filtered.width);
    let r = window / 2;
    let mut values = Vec::with_capacity(filtered.values.len());
    // summed-area table of squares, one plane at a time
    let mut sat = vec![0.0f64; (h + 1) * (w + 1)];
    for c in 0..filtered.channels {
        let plane = filtered.plane(c);
        for y in 0..h {
            let mut row = 0.0;
            for x in 0..w {
                row += plane[y * w + x] * plane[y * w + x];
                sat[(y + 1) * (w + 1) + x + 1] = sat[y * (w + 1) + x + 1] + row;
            }
        }
        for y in 0..h {
            let y0 = y.saturating_sub(r);
            let y1 = (y + r + 1).min(h);
            for x in 0..w {
                let x0 = x.saturating_sub(r);
                let x1 = (x + r + 1).min(w);
                let ss = sat[y1 * (w + 1) + x1] - sat[y0 * (w + 1) + x1] - sat[y1 * (w + 1) + x0]
                    + sat[y0 * (w + 1) + x0];
                let norm = ss.max(0.0).sqrt();
                values.push(plane[y * w + x] / (norm + NORM_EPSILON));
            }
        }
    }
    FilteredImage::new(filtered.channels, h, w, values)
}

/// Rank-order latency code. Positions with a strictly positive intensity at or
/// above `threshold` are sorted by descending intensity (ties in flat
/// channel/row-major order) and split into `time_bins` equal-count bins.
pub fn intensity_to_latency(
    filtered: &FilteredImage,
    time_bins: usize,
    threshold: f64,
) -> Result<SpikeWave> {
    if time_bins == 0 || time_bins >= usize::from(NEVER) {
        return Err(Error::Config(format!("time_bins {time_bins} out of range")));
    }
    let mut order: Vec<usize> = filtered
        .values
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 0.0 && v >= threshold)
        .map(|(i, _)| i)
        .collect();
    // stable sort keeps flat-index order among equal intensities
    order.sort_by(|&a, &b| filtered.values[b].total_cmp(&filtered.values[a]));
    let n = order.len();
    let mut latency = vec![NEVER; filtered.values.len()];
    for (rank, &i) in order.iter().enumerate() {
        latency[i] = (rank * time_bins / n) as SpikeTime;
    }
    Ok(SpikeWave {
        time_bins,
        channels: filtered.channels,
        height: filtered.height,
        width: filtered.width,
        latency,
    })
}

/// Resolves the configured threshold against one normalized image.
pub fn resolve_threshold(normalized: &FilteredImage, threshold: FiringThreshold) -> f64 {
    match threshold {
        FiringThreshold::Fixed(t) => t,
        FiringThreshold::Percentile(q) => {
            let mut nonzero: Vec<f64> = normalized
                .values
                .iter()
                .copied()
                .filter(|&v| v > 0.0)
                .collect();
            if nonzero.is_empty() {
                return f64::INFINITY;
            }
            nonzero.sort_by(f64::total_cmp);
            quantile_sorted(&nonzero, q)
        }
    }
}

/// Full front end with the DoG kernels validated once.
#[derive(Debug, Clone)]
pub struct Encoder {
    config: EncoderConfig,
}

impl Encoder {
    pub fn new(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn encode(&self, image: &Image) -> Result<SpikeWave> {
        let filtered = dog_filter(image, &self.config)?;
        let normalized = local_normalize(&filtered, self.config.norm_window)?;
        let threshold = resolve_threshold(&normalized, self.config.firing_threshold);
        intensity_to_latency(&normalized, self.config.time_bins, threshold)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_oracle(image: &Image, kernel: &[f64], k: usize, cy: usize, cx: usize) -> f64 {
        // direct correlation at one pixel with zeros outside the image
        let r = (k / 2) as isize;
        let mut acc = 0.0;
        for ky in 0..k as isize {
            for kx in 0..k as isize {
                let y = cy as isize + ky - r;
                let x = cx as isize + kx - r;
                if y >= 0 && x >= 0 && (y as usize) < image.height && (x as usize) < image.width {
                    acc += kernel[(ky * k as isize + kx) as usize] * image.get(y as usize, x as usize);
                }
            }
        }
        acc
    }

    #[test]
    fn default_config_matches_three_scales() {
        let cfg = EncoderConfig::default();
        let windows: Vec<_> = cfg.dog_scales.iter().map(|s| s.window).collect();
        assert_eq!(windows, vec![3, 7, 13]);
        assert_eq!(cfg.dog_scales[1].sigma_center, 7.0 / 9.0);
        assert_eq!(cfg.dog_scales[2].sigma_surround, 26.0 / 9.0);
        assert_eq!(cfg.channels(), 6);
        assert_eq!(cfg.time_bins, 15);
    }

    #[test]
    fn rejects_bad_scales() {
        let mut cfg = EncoderConfig::default();
        cfg.dog_scales[0].window = 4;
        assert!(cfg.validate().is_err());
        let mut cfg = EncoderConfig::default();
        cfg.dog_scales[0].sigma_center = 1.0;
        assert!(cfg.validate().is_err());
        let cfg = EncoderConfig {
            time_bins: 0,
            ..EncoderConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn constant_image_has_no_response() {
        let cfg = EncoderConfig {
            padding: 0,
            ..EncoderConfig::default()
        };
        let out = dog_filter(&Image::filled(28, 28, 0.5), &cfg).unwrap();
        assert_eq!(out.channels, 6);
        assert_eq!((out.height, out.width), (16, 16));
        assert!(out.values.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn bright_pixel_peaks_on_center() {
        let mut img = Image::filled(13, 13, 0.0);
        img.pixels[6 * 13 + 6] = 1.0;
        let cfg = EncoderConfig::default();
        let out = dog_filter(&img, &cfg).unwrap();
        assert_eq!((out.height, out.width), (13, 13));
        for (s, scale) in cfg.dog_scales.iter().enumerate() {
            let kernel = dog_kernel(scale);
            let want = dense_oracle(&img, &kernel, scale.window, 6, 6);
            assert!(want > 0.0);
            assert!((out.get(2 * s, 6, 6) - want).abs() < 1e-12);
            let peak = (0..13 * 13)
                .map(|i| out.values[2 * s * 169 + i])
                .fold(f64::MIN, f64::max);
            assert_eq!(out.get(2 * s, 6, 6), peak);
            assert_eq!(out.get(2 * s + 1, 6, 6), 0.0);
        }
    }

    #[test]
    fn off_center_is_negated_on_center() {
        let img = Image::new(
            14,
            14,
            (0..196).map(|i| ((i * 37) % 101) as f64 / 100.0).collect(),
        )
        .unwrap();
        let cfg = EncoderConfig::default();
        let out = dog_filter(&img, &cfg).unwrap();
        for (s, scale) in cfg.dog_scales.iter().enumerate() {
            let raw = dog_response(&img, scale, &cfg).unwrap();
            for (i, r) in raw.iter().enumerate() {
                let on = out.values[2 * s * out.height * out.width + i];
                let off = out.values[(2 * s + 1) * out.height * out.width + i];
                assert_eq!(on - off, *r);
                assert!(on == 0.0 || off == 0.0);
            }
        }
    }

    #[test]
    fn non_finite_pixels_rejected() {
        let mut img = Image::filled(28, 28, 0.0);
        img.pixels[3] = f64::NAN;
        assert!(matches!(
            dog_filter(&img, &EncoderConfig::default()),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn normalize_zero_and_single_value() {
        let zero = FilteredImage::new(2, 5, 5, vec![0.0; 50]).unwrap();
        assert!(local_normalize(&zero, 3).unwrap().values.iter().all(|&v| v == 0.0));

        let mut values = vec![0.0; 25];
        values[7] = 0.37;
        let single = FilteredImage::new(1, 5, 5, values).unwrap();
        let out = local_normalize(&single, 9).unwrap();
        assert!((out.values[7] - 0.37 / (0.37f64 * 0.37).sqrt()).abs() < 1e-9);
        assert!((out.values[7] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn normalize_is_scale_invariant() {
        let values: Vec<f64> = (0..3 * 8 * 8).map(|i| ((i * 13) % 17) as f64 / 7.0).collect();
        let a = FilteredImage::new(3, 8, 8, values.clone()).unwrap();
        let b = FilteredImage::new(3, 8, 8, values.iter().map(|v| v * 42.0).collect()).unwrap();
        let na = local_normalize(&a, 5).unwrap();
        let nb = local_normalize(&b, 5).unwrap();
        for (x, y) in na.values.iter().zip(&nb.values) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn latency_rank_order() {
        let f = FilteredImage::new(1, 1, 3, vec![0.9, 0.5, 0.1]).unwrap();
        let wave = intensity_to_latency(&f, 3, 0.0).unwrap();
        assert_eq!(wave.latency, vec![0, 1, 2]);

        let silent = intensity_to_latency(&f, 3, 1.0).unwrap();
        assert_eq!(silent.spike_count(), 0);
        assert!(silent.latency.iter().all(|&t| t == NEVER));
    }

    #[test]
    fn latency_ties_follow_scan_order() {
        let f = FilteredImage::new(1, 2, 2, vec![0.1, 0.7, 0.7, 0.2]).unwrap();
        let wave = intensity_to_latency(&f, 4, 0.0).unwrap();
        // stable-sort oracle: indices 1, 2 tie, earlier index first
        assert_eq!(wave.latency, vec![3, 0, 1, 2]);
    }

    #[test]
    fn spikes_agree_with_latency() {
        let f = FilteredImage::new(2, 3, 3, (0..18).map(|i| (i % 7) as f64).collect()).unwrap();
        let wave = intensity_to_latency(&f, 5, 2.0).unwrap();
        let dense = wave.spikes();
        let n = wave.latency.len();
        for i in 0..n {
            let fired: Vec<usize> = (0..5).filter(|&t| dense[t * n + i] == 1).collect();
            match wave.latency[i] {
                NEVER => assert!(fired.is_empty()),
                t => assert_eq!(fired, vec![usize::from(t)]),
            }
        }
    }

    #[test]
    fn encoder_is_deterministic() {
        let img = Image::new(
            28,
            28,
            (0..784).map(|i| ((i * 7919) % 256) as f64 / 255.0).collect(),
        )
        .unwrap();
        let enc = Encoder::new(EncoderConfig::default()).unwrap();
        let a = enc.encode(&img).unwrap();
        let b = enc.encode(&img).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.channels, 6);
        assert_eq!((a.height, a.width), (28, 28));
        assert!(a.spike_count() > 0);
    }
}
