//! Config-driven experiments: one TOML file describes the data, the model,
//! the defense and the attack; every seed runs the full pipeline and the
//! results are aggregated into a JSON/CSV report.

mod config;
mod report;
mod runner;

pub use config::{
    config_hash, AttackSettings, DatasetConfig, DefenseConfig, ExperimentConfig, ModelConfig, ShadowSettings,
    TrainSettings, SCHEMA_VERSION,
};
pub use report::{apply_axis, emit_report, emit_sweep, sweep, SweepAxis, SweepPoint, SweepReport};
pub use runner::{
    dump_embeddings, run_experiment, Aggregate, RunReport, SeedResult, ATTACK_ACC, BASELINE_MAIN_ACC,
    GENERATOR_OBJECTIVE, MAIN_TASK_ACC, R_LOWER, R_UPPER,
};
