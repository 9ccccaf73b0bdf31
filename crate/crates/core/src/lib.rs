//! Convolutional spiking network trained with local STDP / R-STDP rules, and
//! a toolkit of catastrophic-forgetting prevention methods for sequential
//! (domain-incremental) learning.
//!
//! * [`encoding`] turns grayscale images into rank-order spike waves.
//! * [`snn`] simulates the integrate-and-fire network and reads out decisions.
//! * [`plasticity`] holds the STDP / R-STDP rule, schedules and freeze masks.
//! * [`continual`] implements Langevin weight-range estimation, bar-pattern
//!   pseudo-rehearsal and episodic memory.
//! * [`data`] loads IDX datasets and builds task splits.
//! * [`experiment`] trains tasks, runs the sequential protocol per method and
//!   writes reports.
//! * [`checkpoint`] is the portable binary format for weights, Langevin
//!   samples and weight bounds.

pub mod checkpoint;
pub mod cli;
pub mod continual;
pub mod data;
pub mod encoding;
pub mod error;
pub mod experiment;
pub mod plasticity;
pub mod snn;
pub mod stats;
pub mod training;

pub use error::{Error, Result};
