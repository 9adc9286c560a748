//! Experiment orchestration: configuration, training, baselines,
//! evaluation and result files.

pub mod baselines;
pub mod config;
pub mod evaluate;
pub mod experiment;
pub mod results;
pub mod sim;
pub mod train;

pub use baselines::BaselinePolicy;
pub use config::ExperimentConfig;
pub use experiment::{run_experiment, ExperimentOutput};
pub use evaluate::{evaluate_policy, EvaluationReport, Policy};
pub use results::emit_results;
pub use sim::Scenario;
pub use train::{run_training, run_training_runs, Checkpoint, RunLog, TrainingOutcome};
