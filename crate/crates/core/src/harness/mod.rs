//! Experiment configuration, execution and presets.

pub mod config;
pub mod presets;
pub mod run;

pub use config::{ExperimentConfig, Mode, Plan};
pub use presets::{list_presets, preset_experiments, run_preset, PresetOutcome};
pub use run::{run_experiment, sweep, ExperimentResult, RunArtifact, RunError};
