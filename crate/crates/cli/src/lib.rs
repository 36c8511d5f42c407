//! Experiment harness: configs, presets, multi-seed runs, sensitivity sweeps
//! and matched-budget method comparisons on top of `decmm-core`.

pub mod compare;
pub mod config;
pub mod harness;
pub mod presets;
pub mod stats;
pub mod sweep;

pub use compare::{compare_methods, CompareReport};
pub use config::{ExperimentConfig, Method};
pub use harness::{run_experiment, ExperimentOutput, Summary};
pub use presets::preset;
pub use sweep::{run_sensitivity, Axis, SweepSpec};
