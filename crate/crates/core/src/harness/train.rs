//! The end-to-end training loop: iterative scheduling, packet-loss-aware
//! control, replay, and periodic gain refresh.

use log::{debug, info, warn};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dira::{self, SelectionTraceRow};
use crate::dqn::{self, AdamState, EpsilonSchedule, QNetwork, ReplayBuffer};
use crate::error::{check_len, Error, Result};
use crate::harness::config::{ExperimentConfig, Seeds};
use crate::harness::sim::{AdaptiveController, Environment, RefreshEvent, Scenario};
use crate::textfmt::MatrixFile;

/// Learned scheduler plus the controller state it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub net: QNetwork,
    pub k_inf: DMatrix<f64>,
    pub channel_success: Vec<f64>,
    pub closure_rates: Vec<f64>,
}

impl Checkpoint {
    pub fn to_matrix_file(&self) -> MatrixFile {
        let mut f = MatrixFile::new();
        self.net.to_matrix_file(&mut f);
        f.push("k_inf", self.k_inf.clone());
        f.push_row("channel_success", &self.channel_success);
        f.push_row("closure_rates", &self.closure_rates);
        f
    }

    pub fn from_matrix_file(f: &MatrixFile) -> Result<Self> {
        Ok(Self {
            net: QNetwork::from_matrix_file(f)?,
            k_inf: f.require("k_inf")?.clone(),
            channel_success: f.require_row("channel_success")?,
            closure_rates: f.require_row("closure_rates")?,
        })
    }

    /// Checks the checkpoint fits the scenario's dimensions.
    pub fn check_compatible(&self, scenario: &Scenario) -> Result<()> {
        let p = &scenario.plant;
        let m = scenario.channels.len();
        check_len("checkpoint input width", dira::input_width(p.state_dim(), p.subsystems(), m), self.net.input_width())?;
        check_len("checkpoint output width", p.subsystems(), self.net.output_width())?;
        check_len("checkpoint K rows", p.state_dim(), self.k_inf.nrows())?;
        check_len("checkpoint channel estimates", m, self.channel_success.len())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub run: usize,
    pub epoch: usize,
    /// Mean raw stage cost over the epoch's steps.
    pub mean_cost: f64,
    pub std_cost: f64,
    pub mean_loss: Option<f64>,
    pub train_steps: usize,
    pub epsilon: f64,
    pub refreshes: usize,
    pub fallbacks: usize,
    pub divergences: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub run: usize,
    pub epochs: Vec<EpochRecord>,
    pub refresh_events: Vec<(usize, RefreshEvent)>,
    pub steps: usize,
    pub transitions_stored: usize,
    /// Set when the run stopped early on a numerical fault.
    pub aborted: Option<String>,
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub log: RunLog,
    pub checkpoint: Checkpoint,
    /// Online network at the end of training; the checkpoint carries the
    /// soft-updated target network.
    pub online: QNetwork,
    pub replay_len: usize,
    pub selection_trace: Vec<SelectionTraceRow>,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

struct EpochStats {
    costs: Vec<f64>,
    loss_sum: f64,
    train_steps: usize,
    refreshes: usize,
    fallbacks: usize,
    divergences: usize,
}

impl EpochStats {
    fn new(horizon: usize) -> Self {
        Self {
            costs: Vec::with_capacity(horizon),
            loss_sum: 0.0,
            train_steps: 0,
            refreshes: 0,
            fallbacks: 0,
            divergences: 0,
        }
    }

    fn finish(self, run: usize, epoch: usize, epsilon: f64) -> EpochRecord {
        let (mean_cost, std_cost) = mean_std(&self.costs);
        EpochRecord {
            run,
            epoch,
            mean_cost,
            std_cost,
            mean_loss: (self.train_steps > 0).then(|| self.loss_sum / self.train_steps as f64),
            train_steps: self.train_steps,
            epsilon,
            refreshes: self.refreshes,
            fallbacks: self.fallbacks,
            divergences: self.divergences,
        }
    }
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// One training run with the seeds of run index `run`.
pub fn run_training(cfg: &ExperimentConfig, scenario: &Scenario, run: usize) -> Result<TrainingOutcome> {
    cfg.validate()?;
    let seeds: Seeds = cfg.seeds.for_run(run);
    let plant = &scenario.plant;
    let n = plant.subsystems();
    let m = scenario.channels.len();
    check_len("configured channel count", cfg.channel_count(), m)?;
    check_len("configured subsystem count", cfg.subsystems(), n)?;

    let mut env = Environment::new(
        scenario,
        seeds.channels,
        seeds.noise,
        cfg.training.initial_state_scale,
        cfg.training.divergence_threshold,
    );
    let (mut ctl, first_event) = AdaptiveController::new(plant, m, &cfg.control)?;
    let width = dira::input_width(plant.state_dim(), n, m);
    let mut online = QNetwork::random(width, cfg.dqn.hidden, n, &mut stream(seeds.weights, 0));
    let mut target = online.clone();
    let mut adam = AdamState::new(cfg.adam(), online.params().len());
    let mut replay = ReplayBuffer::new(cfg.dqn.replay_capacity, cfg.dqn.warmup.max(cfg.dqn.batch_size.min(1)));
    let mut eps = EpsilonSchedule::new(cfg.exploration.start, cfg.exploration.min, cfg.exploration.rate);
    let mut explore_rng = stream(seeds.exploration, 0);
    let mut replay_rng = stream(seeds.exploration, 1);
    let scale = cfg.reward_scale();

    let mut log = RunLog {
        run,
        epochs: Vec::with_capacity(cfg.training.epochs),
        refresh_events: vec![(0, first_event)],
        steps: 0,
        transitions_stored: 0,
        aborted: None,
    };
    let mut trace = Vec::new();
    let mut global = 0usize;

    'epochs: for epoch in 0..cfg.training.epochs {
        let mut stats = EpochStats::new(cfg.training.horizon);
        for _ in 0..cfg.training.horizon {
            let selection = dira::select_action(&env.x, &online, m, eps.epsilon, cfg.exploration.mode, &mut explore_rng)?;
            if cfg.training.trace_selection {
                trace.extend(SelectionTraceRow::from_selection(global, &selection, eps.epsilon));
            }
            let candidate = ctl.candidates(plant, &env.x, &selection.action)?;
            let x_now = env.x.clone();
            let outcome = match env.step(&selection.action, &candidate) {
                Ok(o) => o,
                Err(e) => {
                    log.aborted = Some(e.to_string());
                    log.epochs.push(stats.finish(run, epoch, eps.epsilon));
                    break 'epochs;
                }
            };
            let reward = dira::compute_reward(plant, &x_now, &outcome.u_applied, scale)?;
            stats.costs.push(reward.raw_cost);
            ctl.observe(&outcome)?;
            dira::store_selection_history(&mut replay, &selection, reward.value, &env.x, n, cfg.dqn.storage);
            log.transitions_stored += m;

            if cfg.training.learn && replay.is_ready() {
                for _ in 0..m {
                    let batch = replay.sample(cfg.dqn.batch_size, &mut replay_rng)?;
                    let targets = dqn::bellman_targets(&batch, &target, cfg.dqn.gamma)?;
                    match dqn::train_step(&mut online, &mut adam, &batch, &targets, cfg.dqn.grad_clip) {
                        Ok(loss) => {
                            stats.loss_sum += loss;
                            stats.train_steps += 1;
                        }
                        Err(e @ Error::TrainingFault(_)) => {
                            warn!("run {run}: {e}; aborting");
                            log.aborted = Some(e.to_string());
                            log.epochs.push(stats.finish(run, epoch, eps.epsilon));
                            break 'epochs;
                        }
                        Err(e) => return Err(e),
                    }
                }
            }
            dqn::soft_update(&mut target, &online, cfg.dqn.tau)?;
            eps.step();
            global += 1;
            log.steps += 1;

            if global.is_multiple_of(cfg.control.refresh_interval) {
                let event = ctl.refresh(plant, &cfg.control)?;
                debug!("run {run} step {global}: gain refresh, margin {:.4}", event.margin);
                stats.refreshes += 1;
                stats.fallbacks += event.fallback as usize;
                log.refresh_events.push((global, event));
            }
            if outcome.diverged {
                stats.divergences += 1;
                env.reset_state();
            }
        }
        let rec = stats.finish(run, epoch, eps.epsilon);
        info!(
            "run {run} epoch {epoch}: cost {:.4} ± {:.4}, eps {:.4}",
            rec.mean_cost, rec.std_cost, rec.epsilon
        );
        log.epochs.push(rec);
        env.reset_state();
    }

    let est = &ctl.estimator;
    Ok(TrainingOutcome {
        checkpoint: Checkpoint {
            net: target,
            k_inf: ctl.k_inf.clone(),
            channel_success: est.channel_success(),
            closure_rates: est.closure_rates().as_slice().to_vec(),
        },
        replay_len: replay.len(),
        online,
        selection_trace: trace,
        log,
    })
}

/// `cfg.training.runs` independent runs, in parallel; output order is by run.
pub fn run_training_runs(cfg: &ExperimentConfig, scenario: &Scenario) -> Result<Vec<TrainingOutcome>> {
    (0..cfg.training.runs)
        .into_par_iter()
        .map(|r| run_training(cfg, scenario, r))
        .collect()
}
