//! Experiment orchestration: JSON configs, per-seed trials, the pipeline
//! commands and bundled reproduction recipes.

mod config;
mod data;
mod reproduce;
mod run;

pub use config::{
    DatasetSource, DatasetSpec, ExperimentConfig, GridSpec, Method, ModelSpec, Overrides, Scale, SyntheticKind,
    SMALL_IMAGE_SIDE,
};
pub use data::{DataSource, Prepared};
pub use reproduce::{bundled_config, bundled_config_names, reproduce, ReproduceOptions, TABLE_IDS};
pub use run::{
    apply_method, cmd_bench, cmd_finetune, cmd_lambda_sweep, cmd_oversample, cmd_pretrain, lambda_label, load_pretrained,
    model_config, obtain_pretrained, run_label, run_trial, save_pretrained, BenchOutcome, MethodOutput,
    OversampleArtifacts, PretrainArtifacts, FISHER_FILE, MODEL_FILE, PRETRAIN_LOG_FILE, RESULTS_FILE, SUMMARY_FILE,
};

/// Random stream ids, one per pipeline stage. Streams `1..=K` are used by
/// the per-class generative trainers.
pub mod streams {
    pub const DATA: u64 = 1000;
    pub const METHOD: u64 = 2000;
    pub const CLASSIFIER: u64 = 3000;
    pub const GRID: u64 = 4000;
}
