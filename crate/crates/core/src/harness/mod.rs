//! Experiment configuration, execution and report output.

mod common;
mod config;
mod constants;
mod convergence;
mod equivalence;
mod escape;
mod report;

use serde_json::Value;

use crate::error::Result;

pub use config::{ExperimentConfig, ExperimentKind};
pub use report::{num, trajectory_header, write_report, ExperimentReport, Manifest, Table, Verdict};

/// What an experiment hands back before the manifest is assembled.
pub(crate) struct Outcome {
    tables: Vec<Table>,
    verdicts: Vec<Verdict>,
    summary: Value,
}

/// Runs the configured experiment. Per-replica divergence is recorded in
/// the report; only a run where every replica fails is an error.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let outcome = match config.kind() {
        ExperimentKind::Escape => escape::run_escape(config)?,
        ExperimentKind::NoiseSweep => escape::run_noise_sweep(config)?,
        ExperimentKind::Equivalence => equivalence::run_equivalence(config)?,
        ExperimentKind::Convergence => convergence::run_convergence(config)?,
        ExperimentKind::Constants => constants::run_constants(config)?,
    };
    let seed = config.u64("seed");
    let manifest = Manifest {
        kind: config.kind(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        config: config.values().clone(),
        consumed_keys: config.consumed().into_iter().collect(),
        verdicts: outcome.verdicts,
        summary: outcome.summary,
    };
    Ok(ExperimentReport {
        manifest,
        tables: outcome.tables,
    })
}
