//! Experiment configuration, runs and metric files.

pub mod config;
pub mod experiment;

pub use config::{parse_config, serialize, ExperimentConfig, LevelSpec, Method};
pub use experiment::{
    emit_summary, evenly_spaced_confidence, prepare_seed, run_baseline_fixed_confidence, run_experiment, run_seed,
    spearman, summarize, MetricsLog, RunLog, RunSummary, SeedData, CSV_SCHEMA,
};
