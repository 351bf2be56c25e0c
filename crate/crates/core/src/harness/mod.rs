//! Experiment runner: training, evaluation, sweeps, gradient checks and
//! diagnostics, with JSON and CSV outputs.

mod config;
mod run;
mod sweep;

pub use config::{DataSource, EvalSettings, ModelSettings, RunConfig};
pub use run::{
    class_balanced_batches, diagnose, evaluate_checkpoint, evaluate_split, gradcheck, init_model, load_dataset,
    load_split, train, write_evaluation, write_outputs, EpochLog, Failure, GradcheckOutcome, RunOutput, RunRecord,
    GRADCHECK_BATCH, H_FACTOR_PAIRS,
};
pub use sweep::{sweep, sweep_csv, thread_cap, SweepParam};
