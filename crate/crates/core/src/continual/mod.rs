//! Catastrophic-forgetting prevention: Langevin estimation of permitted
//! weight ranges, bar-pattern pseudo-rehearsal and few-shot episodic memory.

mod langevin;
mod memory;
mod pseudo;

pub use langevin::{
    decile_bounds, langevin_sample, langevin_sample_features, LangevinConfig, LangevinOutcome, Precision, SampleStore,
    WeightBoundsMap,
};
pub use memory::{build_episodic_memory, MemoryBuffer};
pub use pseudo::{build_pseudo_dataset, generate_bar_pattern, Bar, BarPattern, BarPatternConfig};
