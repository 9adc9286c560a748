//! Monte Carlo evaluation of learned and baseline schedulers.

use log::debug;
use nalgebra::{DMatrix, DVector};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dira::{self, Exploration, ScheduleAction};
use crate::error::{Error, Result};
use crate::harness::baselines::{self, BaselinePolicy};
use crate::harness::config::ExperimentConfig;
use crate::harness::sim::{AdaptiveController, Environment, Scenario, StepOutcome};
use crate::harness::train::{mean_std, Checkpoint};
use crate::lqr::{self, ClosureProbabilities};

#[derive(Debug, Clone)]
pub enum Policy {
    Learned(Box<Checkpoint>),
    Baseline(BaselinePolicy),
}

impl Policy {
    pub fn name(&self) -> &str {
        match self {
            Policy::Learned(_) => "dira",
            Policy::Baseline(b) => b.name(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub episode: usize,
    /// Mean stage cost over the steps actually run.
    pub mean_cost: f64,
    pub steps: usize,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub policy: String,
    pub episodes: Vec<EpisodeResult>,
    /// Over all episodes, or over non-diverged ones when exclusion is on.
    pub mean: f64,
    pub std: f64,
    pub diverged_count: usize,
}

impl EvaluationReport {
    pub fn divergence_rate(&self) -> f64 {
        self.diverged_count as f64 / self.episodes.len().max(1) as f64
    }

    pub fn median_cost(&self) -> f64 {
        let mut v: Vec<f64> = self.episodes.iter().map(|e| e.mean_cost).collect();
        v.sort_by(f64::total_cmp);
        match v.len() {
            0 => f64::NAN,
            n if n % 2 == 1 => v[n / 2],
            n => 0.5 * (v[n / 2 - 1] + v[n / 2]),
        }
    }
}

/// How one policy turns a state into an applied step.
enum Driver {
    Scheduled {
        ctl: AdaptiveController,
        chooser: Chooser,
    },
    Perfect {
        gain: DMatrix<f64>,
    },
}

enum Chooser {
    Greedy(Box<crate::dqn::QNetwork>),
    Uniform,
    Weighted(Vec<f64>),
    Oracle(Vec<ScheduleAction>),
}

impl Chooser {
    fn choose(
        &self,
        scenario: &Scenario,
        ctl: &AdaptiveController,
        x: &DVector<f64>,
        rng: &mut ChaCha8Rng,
    ) -> Result<ScheduleAction> {
        let n = scenario.plant.subsystems();
        let m = scenario.channels.len();
        Ok(match self {
            Chooser::Greedy(net) => dira::select_action(x, net, m, 0.0, Exploration::PerStep, rng)?.action,
            Chooser::Uniform => baselines::uniform_action(n, m, rng),
            Chooser::Weighted(w) => baselines::stability_weighted_random(w, m, rng),
            Chooser::Oracle(actions) => {
                baselines::oracle_greedy(&scenario.plant, x, &ctl.k_inf, &ctl.channel_success(), actions)?.0
            }
        })
    }
}

impl Driver {
    fn step(&self, scenario: &Scenario, env: &mut Environment<'_>, rng: &mut ChaCha8Rng) -> Result<StepOutcome> {
        match self {
            Driver::Scheduled { ctl, chooser } => {
                let action = chooser.choose(scenario, ctl, &env.x, rng)?;
                let u = ctl.candidates(&scenario.plant, &env.x, &action)?;
                env.step(&action, &u)
            }
            Driver::Perfect { gain } => {
                let u = -(gain * &env.x);
                env.step_perfect(&u)
            }
        }
    }
}

fn derived_seeds(base: u64, stream: u64) -> [u64; 3] {
    let mut r = ChaCha8Rng::seed_from_u64(base);
    r.set_stream(stream);
    [r.next_u64(), r.next_u64(), r.next_u64()]
}

/// Runs the random and oracle schedulers with the adaptive controller for
/// the calibration period, then freezes gain and success estimates.
fn calibrate(
    cfg: &ExperimentConfig,
    scenario: &Scenario,
    mut ctl: AdaptiveController,
    chooser: &Chooser,
) -> Result<AdaptiveController> {
    let [cs, ns, ps] = derived_seeds(cfg.seeds.evaluation, 0);
    let mut env = Environment::new(
        scenario,
        cs,
        ns,
        cfg.training.initial_state_scale,
        cfg.training.divergence_threshold,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(ps);
    for k in 1..=cfg.evaluation.calibration_steps {
        let action = chooser.choose(scenario, &ctl, &env.x, &mut rng)?;
        let u = ctl.candidates(&scenario.plant, &env.x, &action)?;
        let out = env.step(&action, &u)?;
        ctl.observe(&out)?;
        if k % cfg.control.refresh_interval == 0 {
            ctl.refresh(&scenario.plant, &cfg.control)?;
        }
        if out.diverged {
            env.reset_state();
        }
    }
    if ctl.fixed_success.is_none() {
        ctl.fixed_success = Some(ctl.estimator.channel_success());
    }
    debug!("calibrated closure rates {:?}", ctl.estimator.closure_rates().as_slice());
    Ok(ctl)
}

fn build_driver(policy: &Policy, cfg: &ExperimentConfig, scenario: &Scenario) -> Result<Driver> {
    let plant = &scenario.plant;
    let n = plant.subsystems();
    let m = scenario.channels.len();
    match policy {
        Policy::Learned(cp) => {
            cp.check_compatible(scenario)?;
            let (mut ctl, _) = AdaptiveController::new(plant, m, &cfg.control)?;
            ctl.k_inf = cp.k_inf.clone();
            ctl.fixed_success = Some(cp.channel_success.clone());
            Ok(Driver::Scheduled {
                ctl,
                chooser: Chooser::Greedy(Box::new(cp.net.clone())),
            })
        }
        Policy::Baseline(BaselinePolicy::PerfectCommLqr) => {
            let q = ClosureProbabilities::uniform(n, 1.0);
            let k = lqr::solve_steady_state(plant, &q, &cfg.control.riccati).map_err(Error::NoSteadyState)?;
            Ok(Driver::Perfect {
                gain: lqr::lossy_gain(plant, &k.k, &q)?,
            })
        }
        Policy::Baseline(b) => {
            let (mut ctl, _) = AdaptiveController::new(plant, m, &cfg.control)?;
            let chooser = match b {
                BaselinePolicy::UniformRandom => Chooser::Uniform,
                BaselinePolicy::StabilityWeightedRandom => Chooser::Weighted(baselines::stability_weights(plant)),
                _ => {
                    ctl.fixed_success = Some(scenario.true_success());
                    Chooser::Oracle(dira::enumerate_joint_actions(
                        n,
                        m,
                        cfg.evaluation.enumeration_cap as u128,
                    )?)
                }
            };
            let ctl = calibrate(cfg, scenario, ctl, &chooser)?;
            Ok(Driver::Scheduled { ctl, chooser })
        }
    }
}

/// Mean per-stage cost of `policy` over `episodes` episodes of
/// `cfg.evaluation.horizon` steps. Episode `e` draws its seeds from
/// `cfg.seeds.evaluation` and `e` only, so every policy sees the same
/// initial states, noise and channel realizations.
pub fn evaluate_policy(
    policy: &Policy,
    cfg: &ExperimentConfig,
    scenario: &Scenario,
    episodes: usize,
) -> Result<EvaluationReport> {
    if episodes == 0 {
        return Err(Error::Config("evaluation needs at least one episode".into()));
    }
    let driver = build_driver(policy, cfg, scenario)?;
    let mut results = Vec::with_capacity(episodes);
    for e in 0..episodes {
        let [cs, ns, ps] = derived_seeds(cfg.seeds.evaluation, e as u64 + 1);
        let mut env = Environment::new(
            scenario,
            cs,
            ns,
            cfg.training.initial_state_scale,
            cfg.training.divergence_threshold,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(ps);
        let mut total = 0.0;
        let mut steps = 0;
        let mut diverged = false;
        for _ in 0..cfg.evaluation.horizon {
            let out = driver.step(scenario, &mut env, &mut rng)?;
            total += out.cost;
            steps += 1;
            if out.diverged {
                diverged = true;
                break;
            }
        }
        results.push(EpisodeResult {
            episode: e,
            mean_cost: total / steps.max(1) as f64,
            steps,
            diverged,
        });
    }
    let counted: Vec<f64> = results
        .iter()
        .filter(|r| !(cfg.evaluation.exclude_diverged && r.diverged))
        .map(|r| r.mean_cost)
        .collect();
    let (mean, std) = mean_std(&counted);
    Ok(EvaluationReport {
        policy: policy.name().to_string(),
        diverged_count: results.iter().filter(|r| r.diverged).count(),
        episodes: results,
        mean,
        std,
    })
}
