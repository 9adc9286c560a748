//! Closed-loop simulation pieces shared by training and evaluation.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::channel::{ChannelNetwork, MarkovChannel};
use crate::dira::ScheduleAction;
use crate::error::{Error, Result};
use crate::harness::config::{ControlConfig, ExperimentConfig};
use crate::lqr::{self, ClosureProbabilities, SuccessRateEstimator};
use crate::plant::{generate_random_ncs, PlantModel, SuccessMask};

/// The generated plant and channel set of one experiment.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub plant: PlantModel,
    pub channels: Vec<MarkovChannel>,
}

impl Scenario {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seeds.plant);
        let plant = generate_random_ncs(&cfg.generation, &mut rng)?;
        Ok(Self {
            plant,
            channels: cfg.build_channels()?,
        })
    }

    pub fn true_success(&self) -> Vec<f64> {
        self.channels.iter().map(|c| c.average_success()).collect()
    }
}

/// `δ_i = 1` iff at least one channel assigned to subsystem `i` delivered.
pub fn success_mask(action: &ScheduleAction, acks: &[bool], subsystems: usize) -> SuccessMask {
    let mut mask = vec![false; subsystems];
    for (&i, &ok) in action.as_slice().iter().zip(acks) {
        mask[i] |= ok;
    }
    SuccessMask(mask)
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub acks: Vec<bool>,
    pub mask: SuccessMask,
    pub u_applied: DVector<f64>,
    /// `g(x_k, u_k)` with the applied input.
    pub cost: f64,
    pub diverged: bool,
}

/// Plant state, channel network and noise stream of one run.
pub struct Environment<'a> {
    pub plant: &'a PlantModel,
    pub channels: ChannelNetwork,
    pub x: DVector<f64>,
    noise: ChaCha8Rng,
    initial_scale: f64,
    divergence_threshold: f64,
}

impl<'a> Environment<'a> {
    pub fn new(
        scenario: &'a Scenario,
        channel_seed: u64,
        noise_seed: u64,
        initial_scale: f64,
        divergence_threshold: f64,
    ) -> Self {
        let mut env = Self {
            plant: &scenario.plant,
            channels: ChannelNetwork::new(scenario.channels.clone(), channel_seed),
            x: DVector::zeros(scenario.plant.state_dim()),
            noise: ChaCha8Rng::seed_from_u64(noise_seed),
            initial_scale,
            divergence_threshold,
        };
        env.reset_state();
        env
    }

    /// `x ~ N(0, s^2 I)`.
    pub fn reset_state(&mut self) {
        let s = self.initial_scale;
        let noise = &mut self.noise;
        self.x = DVector::from_fn(self.plant.state_dim(), |_, _| {
            s * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, noise)
        });
    }

    pub fn set_state(&mut self, x: DVector<f64>) {
        self.x = x;
    }

    /// Transmits `candidate` according to `action`, applies the zero-input
    /// rule, and advances plant and channels.
    pub fn step(&mut self, action: &ScheduleAction, candidate: &DVector<f64>) -> Result<StepOutcome> {
        let acks = self.channels.transmit();
        let mask = success_mask(action, &acks, self.plant.subsystems());
        let u = self.plant.apply_dropouts(candidate, &mask)?;
        self.finish(acks, mask, u)
    }

    /// Every packet delivered; channels still advance.
    pub fn step_perfect(&mut self, candidate: &DVector<f64>) -> Result<StepOutcome> {
        let n = self.plant.subsystems();
        let acks = vec![true; self.channels.len()];
        self.finish(acks, SuccessMask::all(n, true), candidate.clone())
    }

    fn finish(&mut self, acks: Vec<bool>, mask: SuccessMask, u: DVector<f64>) -> Result<StepOutcome> {
        let cost = self.plant.stage_cost(&self.x, &u)?;
        let w = self.plant.sample_noise(&mut self.noise);
        self.x = self.plant.step(&self.x, &u, &w)?;
        self.channels.advance();
        if self.x.iter().any(|v| v.is_nan()) {
            return Err(Error::TrainingFault("plant state became NaN".into()));
        }
        let diverged = self.x.amax() > self.divergence_threshold || !cost.is_finite();
        Ok(StepOutcome {
            acks,
            mask,
            u_applied: u,
            cost,
            diverged,
        })
    }
}

/// What happened at a gain refresh.
#[derive(Debug, Clone, PartialEq)]
pub struct RefreshEvent {
    pub closure_rates: Vec<f64>,
    pub margin: f64,
    /// `true` when the steady-state solve failed and the finite-horizon
    /// rollout was used instead.
    pub fallback: bool,
    pub iterations: usize,
}

/// Steady-state gain for closure rates `q`, or the finite-horizon fallback.
pub fn steady_state_or_fallback(
    plant: &PlantModel,
    q: &ClosureProbabilities,
    ctl: &ControlConfig,
) -> Result<(DMatrix<f64>, RefreshEvent)> {
    let margin = lqr::convergence_margin(plant.a(), &plant.state_dims(), q)?;
    let (k, fallback, iterations) = match lqr::solve_steady_state(plant, q, &ctl.riccati) {
        Ok(sol) => (sol.k, false, sol.iterations),
        Err(failure) => {
            warn!(
                "no steady-state gain for closure rates {:?} (margin {margin:.4}): {failure}; \
                 using {}-step finite-horizon rollout",
                q.as_slice(),
                ctl.fallback_horizon
            );
            (lqr::finite_horizon(plant, q, ctl.fallback_horizon)?, true, ctl.fallback_horizon)
        }
    };
    Ok((
        k,
        RefreshEvent {
            closure_rates: q.as_slice().to_vec(),
            margin,
            fallback,
            iterations,
        },
    ))
}

/// Time-varying LQR driven by moving-average success estimates.
#[derive(Debug, Clone)]
pub struct AdaptiveController {
    pub k_inf: DMatrix<f64>,
    pub estimator: SuccessRateEstimator,
    /// When set, candidate inputs use these channel success probabilities
    /// instead of the estimates.
    pub fixed_success: Option<Vec<f64>>,
}

impl AdaptiveController {
    pub fn new(plant: &PlantModel, channels: usize, ctl: &ControlConfig) -> Result<(Self, RefreshEvent)> {
        let estimator = SuccessRateEstimator::new(channels, plant.subsystems(), ctl.window, ctl.estimator_prior);
        let (k_inf, event) = steady_state_or_fallback(plant, &estimator.closure_rates(), ctl)?;
        Ok((
            Self {
                k_inf,
                estimator,
                fixed_success: None,
            },
            event,
        ))
    }

    pub fn channel_success(&self) -> Vec<f64> {
        self.fixed_success
            .clone()
            .unwrap_or_else(|| self.estimator.channel_success())
    }

    pub fn candidates(&self, plant: &PlantModel, x: &DVector<f64>, action: &ScheduleAction) -> Result<DVector<f64>> {
        lqr::compute_candidate_controls(plant, Some(&self.k_inf), x, action, &self.channel_success())
    }

    pub fn observe(&mut self, outcome: &StepOutcome) -> Result<()> {
        self.estimator.update(&outcome.acks, &outcome.mask)
    }

    /// Recomputes the steady-state gain from the per-subsystem closure rates.
    pub fn refresh(&mut self, plant: &PlantModel, ctl: &ControlConfig) -> Result<RefreshEvent> {
        let (k, event) = steady_state_or_fallback(plant, &self.estimator.closure_rates(), ctl)?;
        self.k_inf = k;
        Ok(event)
    }
}
