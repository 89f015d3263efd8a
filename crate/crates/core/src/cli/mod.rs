//! Command implementations behind the `sysid` binary, run configuration
//! and the checkpoint format.

mod checkpoint;
mod commands;
mod config;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, MAGIC};
pub use commands::{
    cmd_bench, cmd_evaluate, cmd_hpo, cmd_report, cmd_simulate, cmd_train, Evaluation, ReportRow, Split,
    TrainSummary, CHECKPOINT_FILE, EVALUATION_FILE, HISTORY_FILE, REFERENCE_ROWS, SUMMARY_FILE, TIMING_FILE,
};
pub use config::{BenchConfig, DatasetRef, HpoConfig, ModelConfig, RunConfig};
