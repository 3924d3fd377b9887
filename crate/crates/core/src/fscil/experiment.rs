use log::info;

use super::metrics::{compute_metrics, RunMetrics};
use super::session::{
    run_base_session, run_incremental_session, LearnerState, ProbeOutcome, ProbeRequest,
    TrainConfig,
};
use super::strategy::Strategy;
use super::task::{generate_task, SessionSpec, SyntheticTask};
use crate::als::AsrReport;
use crate::error::Result;
use crate::net::{Backbone, DEFAULT_WIDTHS};
use crate::rng;

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub strategy: Strategy,
    pub metrics: RunMetrics,
    pub asr_reports: Vec<AsrReport>,
    /// Content hash of the merged backbone after each incremental session.
    pub backbone_hashes: Vec<String>,
    pub probe: Option<ProbeOutcome>,
    pub final_state: LearnerState,
}

/// Backbone with the default widths, resized to the task's input dimension.
pub fn initial_backbone(spec: &SessionSpec) -> Result<Backbone> {
    let mut widths = DEFAULT_WIDTHS.to_vec();
    widths[0] = spec.input_dim;
    Backbone::random(&widths, rng::mix(&[spec.seed, rng::STREAM_INIT]))
}

/// Generates the task and trains the base session; the result can be
/// shared by several strategies.
pub fn prepare_base(spec: &SessionSpec, cfg: &TrainConfig) -> Result<(SyntheticTask, LearnerState)> {
    let task = generate_task(spec)?;
    let state = run_base_session(initial_backbone(spec)?, &task, cfg)?;
    Ok((task, state))
}

/// Runs every incremental session of `task` starting from a trained base.
pub fn run_from_base(
    base: &LearnerState,
    task: &SyntheticTask,
    strategy: Strategy,
    cfg: &TrainConfig,
    probe: Option<&ProbeRequest>,
) -> Result<ExperimentOutcome> {
    let mut state = base.clone();
    let mut asr_reports = Vec::new();
    let mut backbone_hashes = Vec::new();
    let mut probe_out = None;
    for session in task.incremental() {
        let out = run_incremental_session(&mut state, session, strategy, cfg, probe)?;
        asr_reports.extend(out.asr_report);
        backbone_hashes.push(out.backbone_hash);
        if out.probe.is_some() {
            probe_out = out.probe;
        }
    }
    let metrics = compute_metrics(&state.history)?;
    info!(
        "{strategy} seed {}: avg {:.4} pd {:.4}",
        task.spec.seed, metrics.avg, metrics.pd
    );
    Ok(ExperimentOutcome {
        strategy,
        metrics,
        asr_reports,
        backbone_hashes,
        probe: probe_out,
        final_state: state,
    })
}

pub fn run_experiment(
    spec: &SessionSpec,
    strategy: Strategy,
    cfg: &TrainConfig,
) -> Result<ExperimentOutcome> {
    let (task, base) = prepare_base(spec, cfg)?;
    run_from_base(&base, &task, strategy, cfg, None)
}
