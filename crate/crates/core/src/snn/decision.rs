use super::{select_winners, LayerOutput, OutputGroups, WeightTensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decision {
    pub class_label: usize,
    pub winning_neuron: usize,
    pub fired: bool,
}

/// Reads the class out of the last layer: the earliest-spiking neuron wins
/// (ties: higher potential, then lower index); if nothing fired, the neuron
/// with the largest potential. The class is the winner's group.
pub fn decide(output: &LayerOutput, groups: OutputGroups) -> Result<Decision> {
    if output.len() != groups.classes * groups.per_group {
        return Err(Error::Shape {
            expected: format!("{} readout neurons", groups.classes * groups.per_group),
            actual: format!("{}", output.len()),
        });
    }
    let winner = select_winners(output, 1, 0)
        .into_iter()
        .next()
        .ok_or_else(|| Error::InvalidInput("empty readout layer".into()))?;
    let plane = output.height() * output.width();
    let neuron = winner.map * plane + winner.y * output.width() + winner.x;
    Ok(Decision {
        class_label: neuron / groups.per_group,
        winning_neuron: neuron,
        fired: winner.fired(),
    })
}

/// Sets the `floor(fraction * n)` smallest weights (ties by flat index) to `w_min`.
pub fn prune_smallest(weights: &WeightTensor, fraction: f64, w_min: f64) -> Result<WeightTensor> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidInput(format!("prune fraction {fraction} not in [0, 1]")));
    }
    let count = (fraction * weights.len() as f64).floor() as usize;
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| weights.data[a].total_cmp(&weights.data[b]).then(a.cmp(&b)));
    let mut pruned = weights.clone();
    for &i in &order[..count] {
        pruned.data[i] = w_min;
    }
    Ok(pruned)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::{SpikeWave, NEVER};

    fn readout(times: &[(usize, u16)], potential: Vec<f64>) -> LayerOutput {
        let mut latency = vec![NEVER; 200];
        for &(i, t) in times {
            latency[i] = t;
        }
        LayerOutput {
            spikes: SpikeWave::from_latency(15, 200, 1, 1, latency).unwrap(),
            potential,
        }
    }

    #[test]
    fn lone_spike_decides() {
        let d = decide(&readout(&[(45, 3)], vec![0.0; 200]), OutputGroups::default()).unwrap();
        assert_eq!(d.class_label, 2);
        assert_eq!(d.winning_neuron, 45);
        assert!(d.fired);
    }

    #[test]
    fn silent_readout_uses_potential() {
        let mut pot = vec![0.5; 200];
        pot[0] = 0.9;
        let d = decide(&readout(&[], pot), OutputGroups::default()).unwrap();
        assert_eq!((d.class_label, d.fired), (0, false));
    }

    #[test]
    fn simultaneous_spikes_use_potential() {
        let mut pot = vec![0.0; 200];
        pot[10] = 1.0;
        pot[30] = 2.0;
        let d = decide(&readout(&[(10, 4), (30, 4)], pot), OutputGroups::default()).unwrap();
        assert_eq!(d.class_label, 1);
    }

    #[test]
    fn prune_half() {
        let w = WeightTensor {
            out_maps: 1,
            in_channels: 1,
            kernel: 2,
            data: vec![0.3, 0.5, 0.7, 0.8],
        };
        assert_eq!(prune_smallest(&w, 0.5, 0.2).unwrap().data, vec![0.2, 0.2, 0.7, 0.8]);
        assert_eq!(prune_smallest(&w, 0.0, 0.2).unwrap(), w);
        assert!(prune_smallest(&w, 1.0, 0.2).unwrap().data.iter().all(|&v| v == 0.2));
        assert!(prune_smallest(&w, 1.5, 0.2).is_err());
    }
}
