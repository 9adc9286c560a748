//! One full experiment on disk: train, optionally evaluate, write every
//! artifact into an output directory.

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};

use crate::dira::write_selection_trace_csv;
use crate::error::{Error, Result};
use crate::harness::baselines::BaselinePolicy;
use crate::harness::config::ExperimentConfig;
use crate::harness::evaluate::{evaluate_policy, EvaluationReport, Policy};
use crate::harness::results::emit_results;
use crate::harness::sim::Scenario;
use crate::harness::train::{run_training_runs, RunLog};

pub const CONFIG_FILE: &str = "config.toml";
pub const PLANT_FILE: &str = "plant.txt";

pub fn checkpoint_file(run: usize) -> String {
    format!("checkpoint_run{run}.txt")
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub logs: Vec<RunLog>,
    pub reports: Vec<EvaluationReport>,
    pub written: Vec<PathBuf>,
}

/// Whether exhaustive enumeration fits under the configured cap.
pub fn oracle_feasible(cfg: &ExperimentConfig) -> bool {
    (cfg.subsystems() as u128)
        .checked_pow(cfg.channel_count() as u32)
        .is_some_and(|c| c <= cfg.evaluation.enumeration_cap as u128)
}

/// Trains `cfg.training.runs` runs and writes the resolved config, plant,
/// per-run checkpoints (and selection traces when enabled), learning curve
/// and summary. With `evaluate`, run 0's policy and every feasible baseline
/// are evaluated as well.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path, evaluate: bool) -> Result<ExperimentOutput> {
    cfg.validate()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut written = Vec::new();

    let path = out.join(CONFIG_FILE);
    fs::write(&path, cfg.to_toml_string()).map_err(|e| Error::io(&path, e))?;
    written.push(path);

    let scenario = Scenario::from_config(cfg)?;
    let path = out.join(PLANT_FILE);
    scenario.plant.to_matrix_file().write(&path)?;
    written.push(path);

    info!("training {} run(s)", cfg.training.runs);
    let outcomes = run_training_runs(cfg, &scenario)?;
    for o in &outcomes {
        let path = out.join(checkpoint_file(o.log.run));
        o.checkpoint.to_matrix_file().write(&path)?;
        written.push(path);
        if let Some(reason) = &o.log.aborted {
            warn!("run {} aborted: {reason}", o.log.run);
        }
        if cfg.training.trace_selection {
            let path = out.join(format!("selection_trace_run{}.csv", o.log.run));
            write_selection_trace_csv(&o.selection_trace, &path)?;
            written.push(path);
        }
    }

    let mut reports = Vec::new();
    if evaluate {
        let episodes = cfg.evaluation.episodes;
        let learned = Policy::Learned(Box::new(outcomes[0].checkpoint.clone()));
        reports.push(evaluate_policy(&learned, cfg, &scenario, episodes)?);
        for b in BaselinePolicy::ALL {
            if b == BaselinePolicy::OracleGreedy && !oracle_feasible(cfg) {
                continue;
            }
            reports.push(evaluate_policy(&Policy::Baseline(b), cfg, &scenario, episodes)?);
        }
    }

    let logs: Vec<RunLog> = outcomes.into_iter().map(|o| o.log).collect();
    written.extend(emit_results(&logs, &reports, out)?);
    Ok(ExperimentOutput { logs, reports, written })
}
