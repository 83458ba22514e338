//! Experiment configuration, the end-to-end training pipeline, and
//! one-parameter-at-a-time model selection with result logging.

mod config;
mod gradcheck;
mod pipeline;
mod sweep;

pub use config::{parse_strict, DataConfig, DataFormat, ExperimentConfig, ModelKind};
pub use gradcheck::{gradcheck, GradcheckReport, GRADCHECK_EPS, GRADCHECK_TOLERANCE};
pub use pipeline::{load_data, run_experiment, stack_spec, ExperimentOutcome};
pub use sweep::{
    apply_override, compose_optimal, emit_curves, persist_results, read_results, run_sweep,
    select_best, trial_offset, Axis, Best, SweepSpec, TrialResult,
};
