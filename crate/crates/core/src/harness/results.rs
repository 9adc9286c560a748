//! CSV and plain-text result files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::evaluate::EvaluationReport;
use crate::harness::train::{mean_std, RunLog};

pub const LEARNING_CURVE: &str = "learning_curve.csv";
pub const EVALUATION: &str = "evaluation.csv";
pub const EVALUATION_EPISODES: &str = "evaluation_episodes.csv";
pub const SUMMARY: &str = "summary.txt";

/// One learning-curve row; the `agg_*` columns are the across-run mean and
/// the ±2σ band at that epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurveRow {
    pub run: usize,
    pub epoch: usize,
    pub mean_cost: f64,
    pub std_cost: f64,
    pub mean_loss: Option<f64>,
    pub epsilon: f64,
    pub train_steps: usize,
    pub refreshes: usize,
    pub fallbacks: usize,
    pub divergences: usize,
    pub agg_mean: f64,
    pub agg_lower: f64,
    pub agg_upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRow {
    pub policy: String,
    pub mean: f64,
    pub std: f64,
    pub episodes: usize,
    pub diverged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EpisodeRow {
    policy: String,
    episode: usize,
    mean_cost: f64,
    steps: usize,
    diverged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochAggregate {
    pub epoch: usize,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Across-run mean and ±2σ of the per-epoch mean cost. Epochs missing from
/// an aborted run are left out of that epoch's statistics.
pub fn aggregate(logs: &[RunLog]) -> Vec<EpochAggregate> {
    let epochs = logs.iter().map(|l| l.epochs.len()).max().unwrap_or(0);
    (0..epochs)
        .map(|e| {
            let vals: Vec<f64> = logs
                .iter()
                .filter_map(|l| l.epochs.get(e))
                .map(|r| r.mean_cost)
                .collect();
            let (mean, std) = mean_std(&vals);
            EpochAggregate {
                epoch: e,
                mean,
                lower: mean - 2.0 * std,
                upper: mean + 2.0 * std,
            }
        })
        .collect()
}

pub fn learning_curve_rows(logs: &[RunLog]) -> Vec<LearningCurveRow> {
    let agg = aggregate(logs);
    logs.iter()
        .flat_map(|l| l.epochs.iter())
        .map(|r| {
            let a = agg[r.epoch];
            LearningCurveRow {
                run: r.run,
                epoch: r.epoch,
                mean_cost: r.mean_cost,
                std_cost: r.std_cost,
                mean_loss: r.mean_loss,
                epsilon: r.epsilon,
                train_steps: r.train_steps,
                refreshes: r.refreshes,
                fallbacks: r.fallbacks,
                divergences: r.divergences,
                agg_mean: a.mean,
                agg_lower: a.lower,
                agg_upper: a.upper,
            }
        })
        .collect()
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| Error::csv(path, e))).collect()
}

pub fn read_learning_curve(path: &Path) -> Result<Vec<LearningCurveRow>> {
    read_csv(path)
}

pub fn read_evaluation(path: &Path) -> Result<Vec<EvaluationRow>> {
    read_csv(path)
}

/// Plain-text table of the final epoch per run and the evaluation results.
pub fn summary_text(logs: &[RunLog], evals: &[EvaluationReport]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "training runs: {}", logs.len());
    let _ = writeln!(s, "{:>5} {:>7} {:>14} {:>12} {:>10}", "run", "epochs", "final_cost", "epsilon", "status");
    for l in logs {
        let (cost, eps) = l.epochs.last().map_or((f64::NAN, f64::NAN), |r| (r.mean_cost, r.epsilon));
        let status = if l.aborted.is_some() { "aborted" } else { "ok" };
        let _ = writeln!(s, "{:>5} {:>7} {:>14.6} {:>12.6} {:>10}", l.run, l.epochs.len(), cost, eps, status);
    }
    if let Some(last) = aggregate(logs).last() {
        let _ = writeln!(
            s,
            "final epoch across runs: mean {:.6}, 2-sigma band [{:.6}, {:.6}]",
            last.mean, last.lower, last.upper
        );
    }
    if !evals.is_empty() {
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<28} {:>14} {:>12} {:>9} {:>9}", "policy", "mean_cost", "std", "episodes", "diverged");
        for e in evals {
            let _ = writeln!(
                s,
                "{:<28} {:>14.6} {:>12.6} {:>9} {:>9}",
                e.policy,
                e.mean,
                e.std,
                e.episodes.len(),
                e.diverged_count
            );
        }
    }
    s
}

/// Writes the learning curve, evaluation tables and summary into `dir`.
/// Returns the paths written.
pub fn emit_results(logs: &[RunLog], evals: &[EvaluationReport], dir: &Path) -> Result<Vec<PathBuf>> {
    if logs.is_empty() {
        return Err(Error::Config("no training runs to report".into()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let curve = dir.join(LEARNING_CURVE);
    write_csv(&curve, &learning_curve_rows(logs))?;
    let mut written = vec![curve];

    if !evals.is_empty() {
        let rows: Vec<EvaluationRow> = evals
            .iter()
            .map(|e| EvaluationRow {
                policy: e.policy.clone(),
                mean: e.mean,
                std: e.std,
                episodes: e.episodes.len(),
                diverged: e.diverged_count,
            })
            .collect();
        let path = dir.join(EVALUATION);
        write_csv(&path, &rows)?;
        written.push(path);

        let episodes: Vec<EpisodeRow> = evals
            .iter()
            .flat_map(|e| {
                e.episodes.iter().map(|r| EpisodeRow {
                    policy: e.policy.clone(),
                    episode: r.episode,
                    mean_cost: r.mean_cost,
                    steps: r.steps,
                    diverged: r.diverged,
                })
            })
            .collect();
        let path = dir.join(EVALUATION_EPISODES);
        write_csv(&path, &episodes)?;
        written.push(path);
    }

    let path = dir.join(SUMMARY);
    fs::write(&path, summary_text(logs, evals)).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(written)
}
