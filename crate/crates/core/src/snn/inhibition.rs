use std::cmp::Ordering;

use super::LayerOutput;
use crate::encoding::{SpikeTime, NEVER};

/// A neuron selected for plasticity (or as the network's decision).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Winner {
    pub map: usize,
    pub y: usize,
    pub x: usize,
    pub time: SpikeTime,
    pub potential: f64,
}

impl Winner {
    pub fn fired(&self) -> bool {
        self.time != NEVER
    }
}

/// Earlier spike first, then higher potential, then lower flat index.
fn strength_order(a: (SpikeTime, f64, usize), b: (SpikeTime, f64, usize)) -> Ordering {
    a.0.cmp(&b.0)
        .then_with(|| b.1.total_cmp(&a.1))
        .then_with(|| a.2.cmp(&b.2))
}

/// Keeps, at every location, only the spike of the strongest map (earliest,
/// then highest potential, then lowest map index).
pub fn pointwise_inhibit(output: &LayerOutput) -> LayerOutput {
    let plane = output.height() * output.width();
    let mut out = output.clone();
    for pos in 0..plane {
        let mut best: Option<usize> = None;
        for m in 0..output.maps() {
            let i = m * plane + pos;
            if output.spikes.latency[i] == NEVER {
                continue;
            }
            let stronger = best.is_none_or(|b| {
                let j = b * plane + pos;
                strength_order(
                    (output.spikes.latency[i], output.potential[i], m),
                    (output.spikes.latency[j], output.potential[j], b),
                ) == Ordering::Less
            });
            if stronger {
                if let Some(b) = best {
                    out.spikes.latency[b * plane + pos] = NEVER;
                }
                best = Some(m);
            } else {
                out.spikes.latency[i] = NEVER;
            }
        }
    }
    out
}

/// Removes every spike for which a stronger spike of a different map exists
/// within Chebyshev distance `radius`. Stronger means earlier, then higher
/// potential, then lower map index. Suppression is judged against the
/// uninhibited spikes, so it does not cascade. Radius 0 disables inhibition.
pub fn lateral_inhibit(output: &LayerOutput, radius: usize) -> LayerOutput {
    if radius == 0 {
        return output.clone();
    }
    let (maps, h, w) = (output.maps(), output.height(), output.width());
    let plane = h * w;
    let key = |m: usize, pos: usize| {
        let i = m * plane + pos;
        (output.spikes.latency[i], output.potential[i], m)
    };

    // two strongest spiking maps per location
    let mut top: Vec<[Option<usize>; 2]> = vec![[None, None]; plane];
    for (pos, slot) in top.iter_mut().enumerate() {
        for m in 0..maps {
            if output.spikes.latency[m * plane + pos] == NEVER {
                continue;
            }
            match slot[0] {
                None => slot[0] = Some(m),
                Some(a) if strength_order(key(m, pos), key(a, pos)) == Ordering::Less => {
                    slot[1] = slot[0];
                    slot[0] = Some(m);
                }
                _ => match slot[1] {
                    Some(b) if strength_order(key(m, pos), key(b, pos)) != Ordering::Less => {}
                    _ => slot[1] = Some(m),
                },
            }
        }
    }

    let mut inhibited = output.clone();
    for m in 0..maps {
        for y in 0..h {
            for x in 0..w {
                let i = m * plane + y * w + x;
                if output.spikes.latency[i] == NEVER {
                    continue;
                }
                let me = key(m, y * w + x);
                let suppressed = (y.saturating_sub(radius)..(y + radius + 1).min(h)).any(|ny| {
                    (x.saturating_sub(radius)..(x + radius + 1).min(w)).any(|nx| {
                        let pos = ny * w + nx;
                        let rival = match top[pos] {
                            [Some(a), b] if a == m => b,
                            [a, _] => a,
                        };
                        rival.is_some_and(|r| strength_order(key(r, pos), me) == Ordering::Less)
                    })
                });
                if suppressed {
                    inhibited.spikes.latency[i] = NEVER;
                }
            }
        }
    }
    inhibited
}

/// Greedy k-winners-take-all.
///
/// Winners are picked by earliest spike, then highest potential, then lowest
/// flat index. After each pick the winner's whole map and every neuron within
/// Chebyshev distance `radius` of its position are excluded. When nothing
/// fired, candidates are ranked by potential alone.
pub fn select_winners(output: &LayerOutput, k: usize, radius: usize) -> Vec<Winner> {
    let (h, w) = (output.height(), output.width());
    let plane = h * w;
    let mut candidates: Vec<usize> = (0..output.len())
        .filter(|&i| output.spikes.latency[i] != NEVER)
        .collect();
    if candidates.is_empty() {
        candidates = (0..output.len()).collect();
    }
    candidates.sort_by(|&a, &b| {
        strength_order(
            (output.spikes.latency[a], output.potential[a], a),
            (output.spikes.latency[b], output.potential[b], b),
        )
    });

    let mut map_taken = vec![false; output.maps()];
    let mut pos_taken = vec![false; plane];
    let mut winners = Vec::with_capacity(k);
    for i in candidates {
        if winners.len() == k {
            break;
        }
        let (m, pos) = (i / plane, i % plane);
        if map_taken[m] || pos_taken[pos] {
            continue;
        }
        let (y, x) = (pos / w, pos % w);
        winners.push(Winner {
            map: m,
            y,
            x,
            time: output.spikes.latency[i],
            potential: output.potential[i],
        });
        map_taken[m] = true;
        for ny in y.saturating_sub(radius)..(y + radius + 1).min(h) {
            for nx in x.saturating_sub(radius)..(x + radius + 1).min(w) {
                pos_taken[ny * w + nx] = true;
            }
        }
    }
    winners
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::SpikeWave;

    fn layer(maps: usize, h: usize, w: usize, spikes: &[(usize, usize, usize, SpikeTime, f64)]) -> LayerOutput {
        let mut latency = vec![NEVER; maps * h * w];
        let mut potential = vec![0.0; maps * h * w];
        for &(m, y, x, t, p) in spikes {
            latency[(m * h + y) * w + x] = t;
            potential[(m * h + y) * w + x] = p;
        }
        LayerOutput {
            spikes: SpikeWave::from_latency(8, maps, h, w, latency).unwrap(),
            potential,
        }
    }

    #[test]
    fn radius_zero_is_identity() {
        let out = layer(2, 3, 3, &[(0, 1, 1, 1, 2.0), (1, 1, 1, 3, 5.0)]);
        assert_eq!(lateral_inhibit(&out, 0), out);
    }

    #[test]
    fn later_spike_at_same_location_removed() {
        let out = layer(2, 3, 3, &[(0, 1, 1, 1, 2.0), (1, 1, 1, 3, 5.0)]);
        let inh = lateral_inhibit(&out, 1);
        assert_eq!(inh.spikes.latency_at(0, 1, 1), 1);
        assert_eq!(inh.spikes.latency_at(1, 1, 1), NEVER);
    }

    #[test]
    fn distant_spikes_both_survive() {
        let out = layer(2, 1, 5, &[(0, 0, 0, 1, 2.0), (1, 0, 2, 3, 5.0)]);
        let inh = lateral_inhibit(&out, 1);
        assert_eq!(inh, out);
    }

    #[test]
    fn equal_times_keep_higher_potential() {
        let out = layer(3, 1, 1, &[(0, 0, 0, 2, 2.0), (1, 0, 0, 2, 7.0), (2, 0, 0, 2, 7.0)]);
        let inh = lateral_inhibit(&out, 1);
        assert_eq!(inh.spikes.latency, vec![NEVER, 2, NEVER]);
    }

    #[test]
    fn same_map_does_not_inhibit_itself() {
        let out = layer(1, 1, 3, &[(0, 0, 0, 0, 1.0), (0, 0, 1, 5, 1.0)]);
        assert_eq!(lateral_inhibit(&out, 2), out);
    }

    #[test]
    fn single_spike_is_sole_winner() {
        let out = layer(3, 4, 4, &[(2, 1, 3, 4, 1.0)]);
        let w = select_winners(&out, 5, 1);
        assert_eq!(w.len(), 1);
        assert_eq!((w[0].map, w[0].y, w[0].x, w[0].time), (2, 1, 3, 4));
    }

    #[test]
    fn greedy_order_by_time() {
        let out = layer(3, 1, 9, &[(0, 0, 0, 0, 1.0), (1, 0, 4, 1, 1.0), (2, 0, 8, 2, 1.0)]);
        let w = select_winners(&out, 2, 1);
        let times: Vec<_> = w.iter().map(|w| w.time).collect();
        assert_eq!(times, vec![0, 1]);
    }

    #[test]
    fn same_map_excluded_after_pick() {
        let out = layer(2, 1, 9, &[(0, 0, 0, 0, 1.0), (0, 0, 8, 1, 1.0), (1, 0, 4, 2, 1.0)]);
        let w = select_winners(&out, 2, 1);
        assert_eq!(w.len(), 2);
        assert_eq!((w[1].map, w[1].x, w[1].time), (1, 4, 2));
    }

    #[test]
    fn radius_excludes_neighbours_of_other_maps() {
        let out = layer(2, 1, 5, &[(0, 0, 1, 0, 1.0), (1, 0, 2, 1, 1.0)]);
        assert_eq!(select_winners(&out, 2, 1).len(), 1);
        assert_eq!(select_winners(&out, 2, 0).len(), 2);
    }

    #[test]
    fn silent_layer_falls_back_to_potential() {
        let mut out = layer(3, 1, 1, &[]);
        out.potential = vec![0.3, 0.9, 0.1];
        let w = select_winners(&out, 1, 0);
        assert_eq!(w[0].map, 1);
        assert!(!w[0].fired());
    }
}
