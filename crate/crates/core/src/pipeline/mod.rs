//! Config-driven orchestration: prepare, train, evaluate, predict.

pub mod commands;
pub mod config;

pub use commands::{
    cmd_evaluate, cmd_predict, cmd_prepare, cmd_synth, cmd_train, initial_network, load_fold_model,
    patch_loss_accuracy, Dataset, Prediction, PrepareSummary, TrainOutcome, Workspace,
};
pub use config::{Architecture, InitMethod, PipelineConfig, ValidationMode};
