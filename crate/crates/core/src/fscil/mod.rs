//! Few-shot class-incremental protocol: synthetic tasks, session drivers,
//! adaptation strategies and summary metrics.

mod experiment;
mod metrics;
mod session;
mod strategy;
mod task;

pub use experiment::{initial_backbone, prepare_base, run_experiment, run_from_base, ExperimentOutcome};
pub use metrics::{compute_metrics, RunMetrics, SessionRecord};
pub use session::{
    dropout_probe, evaluate, run_base_session, run_incremental_session, LearnerState,
    ProbeOutcome, ProbeRequest, SessionOutcome, TrainConfig, training_batch,
};
pub use strategy::Strategy;
pub use task::{generate_task, SessionData, SessionSpec, SyntheticTask};
