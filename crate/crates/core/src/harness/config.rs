//! Experiment configuration: TOML with one table per concern.
//!
//! A file may name a `preset` at top level; its values are the defaults and
//! every other key in the file overrides them. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::{GilbertElliotParams, MarkovChannel};
use crate::dira::{Exploration, StorageMode};
use crate::dqn::AdamConfig;
use crate::error::{Error, Result};
use crate::lqr::RiccatiOptions;
use crate::plant::GenerationConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    pub generation: GenerationConfig,
    pub channels: ChannelConfig,
    pub dqn: DqnConfig,
    pub exploration: ExplorationConfig,
    pub control: ControlConfig,
    pub training: TrainingConfig,
    pub evaluation: EvaluationConfig,
    pub seeds: Seeds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemConfig {
    /// N, the number of subsystems.
    pub subsystems: usize,
    /// M, the number of channels.
    pub channels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelConfig {
    /// The first `ceil(M * type1_fraction)` channels are type 1.
    pub type1_fraction: f64,
    pub type1: GilbertElliotParams,
    pub type2: GilbertElliotParams,
    /// Explicit channels; when nonempty there must be exactly M of them and
    /// the two presets are ignored.
    pub custom: Vec<CustomChannel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomChannel {
    pub transition: Vec<Vec<f64>>,
    pub dropout: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DqnConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub gamma: f64,
    pub batch_size: usize,
    /// G, replay capacity.
    pub replay_capacity: usize,
    pub tau: f64,
    /// No training until the buffer holds this many transitions.
    pub warmup: usize,
    pub grad_clip: Option<f64>,
    /// Rewards are `-g / reward_scale`; defaults to N.
    pub reward_scale: Option<f64>,
    pub storage: StorageMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExplorationConfig {
    pub start: f64,
    pub min: f64,
    /// Multiplicative decay per environment step.
    pub rate: f64,
    pub mode: Exploration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlConfig {
    /// c: steps between steady-state gain refreshes.
    pub refresh_interval: usize,
    /// D: moving-average window of the success estimators.
    pub window: usize,
    pub estimator_prior: f64,
    /// Length of the finite-horizon rollout used when no steady state exists.
    pub fallback_horizon: usize,
    pub riccati: RiccatiOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub epochs: usize,
    /// T, steps per epoch.
    pub horizon: usize,
    /// Independent runs with derived seeds.
    pub runs: usize,
    /// When false the learner stores transitions but never updates.
    pub learn: bool,
    pub initial_state_scale: f64,
    /// `|x|_inf` above this counts as divergence.
    pub divergence_threshold: f64,
    pub trace_selection: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    pub episodes: usize,
    pub horizon: usize,
    /// Steps a baseline runs with the adaptive controller before its
    /// estimates are frozen for evaluation.
    pub calibration_steps: usize,
    pub exclude_diverged: bool,
    pub enumeration_cap: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seeds {
    pub plant: u64,
    pub channels: u64,
    pub exploration: u64,
    pub weights: u64,
    pub noise: u64,
    pub evaluation: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            plant: 1,
            channels: 2,
            exploration: 3,
            weights: 4,
            noise: 5,
            evaluation: 6,
        }
    }
}

impl Seeds {
    /// Seeds for run `run`; the plant seed is shared by all runs.
    pub fn for_run(&self, run: usize) -> Self {
        let off = 1_000_003u64.wrapping_mul(run as u64);
        Self {
            plant: self.plant,
            channels: self.channels.wrapping_add(off),
            exploration: self.exploration.wrapping_add(off),
            weights: self.weights.wrapping_add(off),
            noise: self.noise.wrapping_add(off),
            evaluation: self.evaluation,
        }
    }

    /// Replaces every per-run seed with one derived from `seed`.
    pub fn override_with(&mut self, seed: u64) {
        self.channels = seed.wrapping_mul(4).wrapping_add(1);
        self.exploration = seed.wrapping_mul(4).wrapping_add(2);
        self.weights = seed.wrapping_mul(4).wrapping_add(3);
        self.noise = seed.wrapping_mul(4).wrapping_add(4);
    }
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            type1_fraction: 1.0 / 3.0,
            type1: GilbertElliotParams {
                avg_success: 0.99,
                ..Default::default()
            },
            type2: GilbertElliotParams {
                avg_success: 0.93,
                ..Default::default()
            },
            custom: Vec::new(),
        }
    }
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            hidden: 2048,
            learning_rate: 1e-6,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            gamma: 0.95,
            batch_size: 40,
            replay_capacity: 75_000,
            tau: 0.005,
            warmup: 1000,
            grad_clip: None,
            reward_scale: None,
            storage: StorageMode::Literal,
        }
    }
}

impl Default for ExplorationConfig {
    fn default() -> Self {
        Self {
            start: 1.0,
            min: 0.001,
            rate: 0.99995,
            mode: Exploration::PerStep,
        }
    }
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            refresh_interval: 500,
            window: 2000,
            estimator_prior: 0.5,
            fallback_horizon: 50,
            riccati: RiccatiOptions::default(),
        }
    }
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 75,
            horizon: 500,
            runs: 1,
            learn: true,
            initial_state_scale: 1.0,
            divergence_threshold: 1e6,
            trace_selection: false,
        }
    }
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            episodes: 20,
            horizon: 500,
            calibration_steps: 2000,
            exclude_diverged: false,
            enumeration_cap: 1_000_000,
        }
    }
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            subsystems: 8,
            channels: 6,
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::preset("n8m6").expect("built-in preset")
    }
}

pub const PRESETS: &[&str] = &["desk", "n8m6", "n12m9", "n16m12"];

impl ExperimentConfig {
    fn base() -> Self {
        Self {
            system: SystemConfig::default(),
            generation: GenerationConfig::default(),
            channels: ChannelConfig::default(),
            dqn: DqnConfig::default(),
            exploration: ExplorationConfig::default(),
            control: ControlConfig::default(),
            training: TrainingConfig::default(),
            evaluation: EvaluationConfig::default(),
            seeds: Seeds::default(),
        }
    }

    /// Built-in scales. The three large presets use the full-scale
    /// hyper-parameters; `desk` is a small instance that trains in about a
    /// minute.
    pub fn preset(name: &str) -> Result<Self> {
        let mut cfg = Self::base();
        let (n, m, hidden, rate, capacity) = match name {
            "n8m6" => (8, 6, 2048, 0.99995, 75_000),
            "n12m9" => (12, 9, 4096, 0.99997, 100_000),
            "n16m12" => (16, 12, 6144, 0.99999, 125_000),
            "desk" => (4, 3, 128, 0.9994, 20_000),
            other => {
                return Err(Error::Config(format!(
                    "unknown preset `{other}` (known: {})",
                    PRESETS.join(", ")
                )))
            }
        };
        cfg.system = SystemConfig {
            subsystems: n,
            channels: m,
        };
        cfg.dqn.hidden = hidden;
        cfg.dqn.replay_capacity = capacity;
        cfg.exploration.rate = rate;
        if name == "desk" {
            cfg.dqn.learning_rate = 1e-3;
            cfg.dqn.grad_clip = Some(0.1);
            cfg.training.epochs = 15;
        }
        cfg.sync();
        Ok(cfg)
    }

    fn sync(&mut self) {
        self.generation.subsystems = self.system.subsystems;
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let base = match table.remove("preset") {
            Some(toml::Value::String(name)) => Self::preset(&name)?,
            Some(_) => return Err(Error::Config("`preset` must be a string".into())),
            None => Self::base(),
        };
        let mut merged = toml::Table::try_from(&base).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut merged, table);
        let mut cfg: Self = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.sync();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn subsystems(&self) -> usize {
        self.system.subsystems
    }

    pub fn channel_count(&self) -> usize {
        self.system.channels
    }

    pub fn reward_scale(&self) -> f64 {
        self.dqn.reward_scale.unwrap_or(self.system.subsystems as f64)
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.dqn.learning_rate,
            beta1: self.dqn.beta1,
            beta2: self.dqn.beta2,
            epsilon: self.dqn.adam_epsilon,
        }
    }

    pub fn type1_count(&self) -> usize {
        ((self.system.channels as f64 * self.channels.type1_fraction) - 1e-9)
            .ceil()
            .max(0.0) as usize
    }

    pub fn build_channels(&self) -> Result<Vec<MarkovChannel>> {
        let m = self.system.channels;
        if !self.channels.custom.is_empty() {
            if self.channels.custom.len() != m {
                return Err(Error::Config(format!(
                    "{} custom channels configured for M = {m}",
                    self.channels.custom.len()
                )));
            }
            return self
                .channels
                .custom
                .iter()
                .enumerate()
                .map(|(j, c)| {
                    let k = c.transition.len();
                    if c.transition.iter().any(|r| r.len() != k) {
                        return Err(Error::Config(format!("custom channel {} transition is not square", j + 1)));
                    }
                    let flat: Vec<f64> = c.transition.iter().flatten().cloned().collect();
                    MarkovChannel::new(
                        nalgebra::DMatrix::from_row_slice(k, k, &flat),
                        c.dropout.clone(),
                        format!("custom-{}", j + 1),
                    )
                })
                .collect();
        }
        let t1 = self.type1_count();
        (0..m)
            .map(|j| {
                if j < t1 {
                    self.channels.type1.build("type1")
                } else {
                    self.channels.type2.build("type2")
                }
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let prob = |name: &str, v: f64| -> Result<()> {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} = {v} must lie in [0, 1]")))
            }
        };
        if self.system.subsystems == 0 || self.system.channels == 0 {
            return bad("system.subsystems and system.channels must be positive".into());
        }
        if self.generation.subsystems != self.system.subsystems {
            return bad("generation size out of sync with system.subsystems".into());
        }
        self.generation.validate()?;
        prob("channels.type1_fraction", self.channels.type1_fraction)?;
        prob("dqn.gamma", self.dqn.gamma)?;
        prob("dqn.tau", self.dqn.tau)?;
        prob("exploration.start", self.exploration.start)?;
        prob("exploration.min", self.exploration.min)?;
        prob("exploration.rate", self.exploration.rate)?;
        prob("control.estimator_prior", self.control.estimator_prior)?;
        if self.dqn.tau == 0.0 {
            return bad("dqn.tau must be in (0, 1]".into());
        }
        if self.exploration.min > self.exploration.start {
            return bad("exploration.min exceeds exploration.start".into());
        }
        if self.dqn.hidden == 0 || self.dqn.batch_size == 0 || self.dqn.replay_capacity == 0 {
            return bad("dqn.hidden, dqn.batch_size and dqn.replay_capacity must be positive".into());
        }
        if self.dqn.learning_rate <= 0.0 {
            return bad("dqn.learning_rate must be positive".into());
        }
        if matches!(self.dqn.reward_scale, Some(s) if s <= 0.0) {
            return bad("dqn.reward_scale must be positive".into());
        }
        if matches!(self.dqn.grad_clip, Some(c) if c <= 0.0) {
            return bad("dqn.grad_clip must be positive".into());
        }
        if self.training.epochs == 0 || self.training.horizon == 0 || self.training.runs == 0 {
            return bad("training.epochs, training.horizon and training.runs must be positive".into());
        }
        let total = self.training.epochs * self.training.horizon;
        if self.control.refresh_interval == 0 || self.control.refresh_interval > total {
            return bad(format!(
                "control.refresh_interval must be in 1..={total} (total training steps)"
            ));
        }
        if self.control.window == 0 {
            return bad("control.window must be positive".into());
        }
        if self.control.riccati.tolerance <= 0.0 || self.control.riccati.max_iterations == 0 {
            return bad("control.riccati tolerance and max_iterations must be positive".into());
        }
        if self.training.divergence_threshold <= 0.0 || self.training.initial_state_scale < 0.0 {
            return bad("training.divergence_threshold must be positive".into());
        }
        if self.evaluation.episodes == 0 || self.evaluation.horizon == 0 {
            return bad("evaluation.episodes and evaluation.horizon must be positive".into());
        }
        Ok(())
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
