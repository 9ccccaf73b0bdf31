//! Local learning rules.
//!
//! One sign-only STDP rule covers both unsupervised STDP and reward-modulated
//! STDP. For a synapse from presynaptic neuron `j` to postsynaptic neuron `i`:
//!
//! ```text
//! dw = delta * (w - w_min) * (w_max - w)
//! delta = alpha*phi_r*a_r_plus  + beta*phi_p*a_p_minus   if t_j <= t_i
//!         alpha*phi_r*a_r_minus + beta*phi_p*a_p_plus    otherwise, or j never fired
//! ```
//!
//! `(alpha, beta)` is `(1, 0)` under reward or plain STDP and `(0, 1)` under
//! punishment. `phi_r` / `phi_p` are the miss / hit ratios of the last batch
//! (plain STDP uses `phi_r = 1`, `phi_p = 0`). With noise enabled every
//! magnitude `a` selected for a synapse becomes `a + sigma * N(0, 1)`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::encoding::{SpikeWave, NEVER};
use crate::error::{Error, Result};
use crate::snn::{Decision, WeightTensor, Winner, W_MAX, W_MIN};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlasticityParams {
    pub a_r_plus: f64,
    pub a_r_minus: f64,
    pub a_p_plus: f64,
    pub a_p_minus: f64,
    pub w_min: f64,
    pub w_max: f64,
    /// Scale each change by `(w - w_min)(w_max - w)`; when off the update is
    /// the plain clamped `w + delta`.
    #[serde(default = "enabled")]
    pub stabilizer: bool,
}

fn enabled() -> bool {
    true
}

impl Default for PlasticityParams {
    fn default() -> Self {
        Self {
            a_r_plus: 0.004,
            a_r_minus: -0.003,
            a_p_plus: 0.0005,
            a_p_minus: -0.004,
            w_min: W_MIN,
            w_max: W_MAX,
            stabilizer: true,
        }
    }
}

impl PlasticityParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.w_min < self.w_max) {
            return Err(Error::Config(format!(
                "w_min {} must be below w_max {}",
                self.w_min, self.w_max
            )));
        }
        if !(self.a_r_plus > 0.0 && self.a_r_minus < 0.0) {
            return Err(Error::Config(format!(
                "need a_r_plus > 0 and a_r_minus < 0, got {} / {}",
                self.a_r_plus, self.a_r_minus
            )));
        }
        Ok(())
    }
}

/// Hit/miss counts over the last batch of samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchStats {
    pub batch_size: usize,
    pub n_hit: usize,
    pub n_miss: usize,
    pub phi_r: f64,
    pub phi_p: f64,
}

impl BatchStats {
    pub fn from_counts(n_hit: usize, n_miss: usize) -> Result<Self> {
        let n = n_hit + n_miss;
        if n == 0 {
            return Err(Error::InvalidInput("batch statistics need at least one sample".into()));
        }
        Ok(Self {
            batch_size: n,
            n_hit,
            n_miss,
            phi_r: n_miss as f64 / n as f64,
            phi_p: n_hit as f64 / n as f64,
        })
    }

    /// Chance-level statistics used before the first batch completes.
    pub fn chance(classes: usize) -> Self {
        let classes = classes.max(1);
        Self {
            batch_size: classes,
            n_hit: 1,
            n_miss: classes - 1,
            phi_r: (classes - 1) as f64 / classes as f64,
            phi_p: 1.0 / classes as f64,
        }
    }
}

/// Counts hits and misses over a batch of correctness flags.
pub fn update_batch_stats(outcomes: &[bool]) -> Result<BatchStats> {
    let hits = outcomes.iter().filter(|&&ok| ok).count();
    BatchStats::from_counts(hits, outcomes.len() - hits)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    Stdp,
    Reward,
    Punishment,
}

impl RewardMode {
    /// `(alpha, beta)` gating the reward and punishment terms.
    pub fn coefficients(self) -> (f64, f64) {
        match self {
            RewardMode::Stdp | RewardMode::Reward => (1.0, 0.0),
            RewardMode::Punishment => (0.0, 1.0),
        }
    }
}

/// Reward when the predicted class matches the label, punishment otherwise.
pub fn reward_signal(decision: &Decision, label: usize) -> RewardMode {
    if decision.class_label == label {
        RewardMode::Reward
    } else {
        RewardMode::Punishment
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub enabled: bool,
    pub sigma_plus: f64,
    pub sigma_minus: f64,
}

impl NoiseConfig {
    pub fn disabled() -> Self {
        Self::default()
    }

    /// `sigma = ratio * |a|` for the current STDP magnitudes.
    pub fn relative_to(params: &PlasticityParams, ratio: f64) -> Self {
        Self {
            enabled: true,
            sigma_plus: ratio * params.a_r_plus.abs(),
            sigma_minus: ratio * params.a_r_minus.abs(),
        }
    }
}

/// `delta` for one synapse. Noise, when enabled, is drawn only for the term
/// selected by `(alpha, beta)` and the causality of the spike pair.
pub fn stdp_delta<R: Rng + ?Sized>(
    causal: bool,
    mode: RewardMode,
    stats: &BatchStats,
    params: &PlasticityParams,
    noise: &NoiseConfig,
    rng: &mut R,
) -> f64 {
    let (phi_r, phi_p) = match mode {
        RewardMode::Stdp => (1.0, 0.0),
        _ => (stats.phi_r, stats.phi_p),
    };
    let (alpha, beta) = mode.coefficients();
    let (gain, a, sigma) = match (alpha != 0.0, causal) {
        (true, true) => (alpha * phi_r, params.a_r_plus, noise.sigma_plus),
        (true, false) => (alpha * phi_r, params.a_r_minus, noise.sigma_minus),
        (false, true) => (beta * phi_p, params.a_p_minus, noise.sigma_minus),
        (false, false) => (beta * phi_p, params.a_p_plus, noise.sigma_plus),
    };
    let a = if noise.enabled && sigma > 0.0 {
        let z: f64 = StandardNormal.sample(rng);
        a + sigma * z
    } else {
        a
    };
    gain * a
}

/// Applies the (by default stabilized) update to one weight, clamps to `[w_min, w_max]` and
/// then to `bounds` when given. A frozen weight is returned unchanged.
#[inline]
pub fn apply_update(w: f64, delta: f64, params: &PlasticityParams, frozen: bool, bounds: Option<(f64, f64)>) -> f64 {
    if frozen {
        return w;
    }
    let dw = if params.stabilizer {
        delta * (w - params.w_min) * (params.w_max - w)
    } else {
        delta
    };
    let mut next = (w + dw).clamp(params.w_min, params.w_max);
    if let Some((lo, hi)) = bounds {
        next = next.clamp(lo, hi);
    }
    next
}

/// Doubling schedule for the STDP magnitudes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LRSchedule {
    pub period: usize,
    pub factor: f64,
    pub cap_plus: f64,
    pub cap_minus: f64,
    pub iteration: usize,
    /// Skip a doubling that would overshoot a cap instead of clamping it.
    #[serde(default)]
    pub check_before_doubling: bool,
}

impl Default for LRSchedule {
    fn default() -> Self {
        Self {
            period: 500,
            factor: 2.0,
            cap_plus: 0.15,
            cap_minus: -0.1125,
            iteration: 0,
            check_before_doubling: false,
        }
    }
}

/// Advances the schedule by one iteration. Every `period`-th iteration, while
/// `a_r_plus < cap_plus` and `a_r_minus > cap_minus`, both STDP magnitudes are
/// multiplied by `factor` and clamped to the caps.
pub fn lr_step(schedule: &mut LRSchedule, params: &PlasticityParams) -> PlasticityParams {
    schedule.iteration += 1;
    let mut next = *params;
    if schedule.period == 0 || schedule.iteration % schedule.period != 0 {
        return next;
    }
    if params.a_r_plus < schedule.cap_plus && params.a_r_minus > schedule.cap_minus {
        let plus = params.a_r_plus * schedule.factor;
        let minus = params.a_r_minus * schedule.factor;
        if schedule.check_before_doubling && (plus > schedule.cap_plus || minus < schedule.cap_minus) {
            return next;
        }
        next.a_r_plus = plus.min(schedule.cap_plus);
        next.a_r_minus = minus.max(schedule.cap_minus);
    }
    next
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FreezeMask {
    pub frozen: Vec<bool>,
}

impl FreezeMask {
    pub fn none(len: usize) -> Self {
        Self {
            frozen: vec![false; len],
        }
    }

    pub fn count(&self) -> usize {
        self.frozen.iter().filter(|&&f| f).count()
    }
}

/// Freezes the `ceil(fraction * n)` largest weights (ties by lowest flat index).
pub fn freeze_top_fraction(weights: &[f64], fraction: f64) -> Result<FreezeMask> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidInput(format!("freeze fraction {fraction} not in [0, 1]")));
    }
    let count = ((fraction * weights.len() as f64).ceil() as usize).min(weights.len());
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    let mut mask = FreezeMask::none(weights.len());
    for &i in &order[..count] {
        mask.frozen[i] = true;
    }
    Ok(mask)
}

/// Per-synapse `[lower, upper]` clamp applied on top of `[w_min, w_max]`.
pub trait SynapseBounds {
    fn bounds(&self, index: usize) -> (f64, f64);
}

/// Everything needed to update the shared kernel of one winner.
pub struct UpdateContext<'a> {
    pub mode: RewardMode,
    pub stats: &'a BatchStats,
    pub params: &'a PlasticityParams,
    pub noise: &'a NoiseConfig,
    pub mask: Option<&'a FreezeMask>,
    pub bounds: Option<&'a dyn SynapseBounds>,
}

/// Updates the kernel of `winner.map` from the spike timing inside the
/// winner's receptive field. A presynaptic spike at or before the winner's
/// spike is causal; a winner that never fired counts every presynaptic spike
/// as causal. Presynaptic neurons that never fired are anti-causal.
pub fn update_winner<R: Rng + ?Sized>(
    weights: &mut WeightTensor,
    input: &SpikeWave,
    stride: usize,
    winner: &Winner,
    ctx: &UpdateContext<'_>,
    rng: &mut R,
) {
    let k = weights.kernel;
    let fan_in = weights.fan_in();
    let base = winner.map * fan_in;
    let post = winner.time;
    // the two possible deltas are fixed for this step unless noise is drawn
    let noisy = ctx.noise.enabled;
    let fixed_causal = stdp_delta(true, ctx.mode, ctx.stats, ctx.params, &NoiseConfig::disabled(), rng);
    let fixed_anti = stdp_delta(false, ctx.mode, ctx.stats, ctx.params, &NoiseConfig::disabled(), rng);
    for c in 0..weights.in_channels {
        for ky in 0..k {
            let row = input.index(c, winner.y * stride + ky, winner.x * stride);
            for kx in 0..k {
                let pre = input.latency[row + kx];
                let causal = pre != NEVER && (post == NEVER || pre <= post);
                let offset = (c * k + ky) * k + kx;
                let i = base + offset;
                let frozen = ctx.mask.is_some_and(|m| m.frozen[i]);
                if frozen {
                    continue;
                }
                let delta = if noisy {
                    stdp_delta(causal, ctx.mode, ctx.stats, ctx.params, ctx.noise, rng)
                } else if causal {
                    fixed_causal
                } else {
                    fixed_anti
                };
                let bounds = ctx.bounds.map(|b| b.bounds(i));
                weights.data[i] = apply_update(weights.data[i], delta, ctx.params, false, bounds);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn plain_stdp_causal() {
        let d = stdp_delta(
            true,
            RewardMode::Stdp,
            &BatchStats::chance(10),
            &PlasticityParams::default(),
            &NoiseConfig::disabled(),
            &mut rng(),
        );
        assert_eq!(d, 0.004);
    }

    #[test]
    fn punishment_causal_uses_hit_ratio() {
        let stats = BatchStats::from_counts(7, 3).unwrap();
        let d = stdp_delta(
            true,
            RewardMode::Punishment,
            &stats,
            &PlasticityParams::default(),
            &NoiseConfig::disabled(),
            &mut rng(),
        );
        assert!((d - (-0.0028)).abs() < 1e-15);
    }

    #[test]
    fn reward_without_misses_is_zero() {
        let stats = BatchStats::from_counts(10, 0).unwrap();
        for causal in [true, false] {
            let d = stdp_delta(
                causal,
                RewardMode::Reward,
                &stats,
                &PlasticityParams::default(),
                &NoiseConfig::disabled(),
                &mut rng(),
            );
            assert_eq!(d, 0.0);
        }
    }

    #[test]
    fn stabilized_update() {
        let p = PlasticityParams::default();
        assert_eq!(apply_update(0.2, 0.9, &p, false, None), 0.2);
        assert_eq!(apply_update(0.8, -0.9, &p, false, None), 0.8);
        let w = apply_update(0.5, 0.004, &p, false, None);
        assert!((w - 0.50036).abs() < 1e-15);
        assert_eq!(apply_update(0.437, 1.0, &p, true, None), 0.437);
        assert_eq!(apply_update(0.5, 1.0, &p, false, Some((0.3, 0.55))), 0.55);
    }

    #[test]
    fn reward_and_punishment() {
        let d = |c| Decision {
            class_label: c,
            winning_neuron: c * 20,
            fired: false,
        };
        assert_eq!(reward_signal(&d(3), 3), RewardMode::Reward);
        assert_eq!(reward_signal(&d(3), 7), RewardMode::Punishment);
    }

    #[test]
    fn batch_stats() {
        let mut flags = vec![true; 7];
        flags.extend([false; 3]);
        let s = update_batch_stats(&flags).unwrap();
        assert!((s.phi_p - 0.7).abs() < 1e-15 && (s.phi_r - 0.3).abs() < 1e-15);
        let s = update_batch_stats(&[true; 4]).unwrap();
        assert_eq!((s.phi_p, s.phi_r), (1.0, 0.0));
        let s = update_batch_stats(&[false; 4]).unwrap();
        assert_eq!((s.phi_p, s.phi_r), (0.0, 1.0));
        assert!(update_batch_stats(&[]).is_err());
    }

    #[test]
    fn schedule_doubles_every_period() {
        let mut sched = LRSchedule::default();
        let mut p = PlasticityParams::default();
        for _ in 0..499 {
            p = lr_step(&mut sched, &p);
        }
        assert_eq!(p.a_r_plus, 0.004);
        p = lr_step(&mut sched, &p);
        assert_eq!(p.a_r_plus, 0.008);
        assert_eq!(p.a_r_minus, -0.006);
    }

    #[test]
    fn schedule_clamps_at_caps() {
        let mut sched = LRSchedule {
            iteration: 499,
            ..LRSchedule::default()
        };
        let p = PlasticityParams {
            a_r_plus: 0.128,
            a_r_minus: -0.096,
            ..PlasticityParams::default()
        };
        let next = lr_step(&mut sched, &p);
        assert_eq!(next.a_r_plus, 0.15);
        assert_eq!(next.a_r_minus, -0.1125);
        // saturated: no further change
        sched.iteration = 999;
        assert_eq!(lr_step(&mut sched, &next), next);

        let mut strict = LRSchedule {
            iteration: 499,
            check_before_doubling: true,
            ..LRSchedule::default()
        };
        assert_eq!(lr_step(&mut strict, &p), p);
    }

    #[test]
    fn freeze_largest() {
        let w = [0.3, 0.5, 0.7, 0.8];
        assert_eq!(freeze_top_fraction(&w, 0.0).unwrap().count(), 0);
        assert_eq!(freeze_top_fraction(&w, 0.25).unwrap().frozen, vec![false, false, false, true]);
        assert_eq!(freeze_top_fraction(&w, 1.0).unwrap().count(), 4);
        let ties = [0.5, 0.5, 0.5];
        assert_eq!(freeze_top_fraction(&ties, 0.3).unwrap().frozen, vec![true, false, false]);
    }

    #[test]
    fn winner_update_respects_causality() {
        let mut w = WeightTensor::filled(2, 1, 1, 0.5);
        let input = SpikeWave::from_latency(5, 1, 1, 3, vec![1, 4, NEVER]).unwrap();
        let params = PlasticityParams::default();
        let stats = BatchStats::chance(10);
        let ctx = UpdateContext {
            mode: RewardMode::Stdp,
            stats: &stats,
            params: &params,
            noise: &NoiseConfig::disabled(),
            mask: None,
            bounds: None,
        };
        let mut r = rng();
        for x in 0..3 {
            let winner = Winner {
                map: 1,
                y: 0,
                x,
                time: 2,
                potential: 1.0,
            };
            update_winner(&mut w, &input, 1, &winner, &ctx, &mut r);
        }
        assert_eq!(w.data[0], 0.5);
        // map 1 kernel has one weight, updated three times: causal, anti, anti
        let mut want = apply_update(0.5, 0.004, &params, false, None);
        want = apply_update(want, -0.003, &params, false, None);
        want = apply_update(want, -0.003, &params, false, None);
        assert_eq!(w.data[1], want);
    }
}
