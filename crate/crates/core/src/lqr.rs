//! Packet-loss-aware LQR.
//!
//! Dropouts enter the dynamics as `x' = A x + B Δ u + w` with
//! `Δ = diag(δ_i I_{m_i})` and independent Bernoulli `δ_i` with mean `q_i`.
//! The lossy Riccati recursion uses the exact first and second moments of
//! `B Δ`, which reduce to the classical recursion when every `q_i = 1`.

use std::collections::VecDeque;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dira::ScheduleAction;
use crate::error::{check_len, Error, Result};
use crate::linalg;
use crate::plant::{PlantModel, SuccessMask};
use crate::textfmt::MatrixFile;

/// Per-subsystem probability that the control loop closes in a step.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosureProbabilities(Vec<f64>);

impl ClosureProbabilities {
    pub fn new(q: Vec<f64>) -> Result<Self> {
        if q.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Config(format!("closure probabilities outside [0, 1]: {q:?}")));
        }
        Ok(Self(q))
    }

    pub fn uniform(n: usize, q: f64) -> Self {
        Self(vec![q.clamp(0.0, 1.0); n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `E{B Δ} = B diag(q_i I_{m_i})`.
pub fn expected_b(plant: &PlantModel, q: &ClosureProbabilities) -> Result<DMatrix<f64>> {
    check_len("closure probabilities", plant.subsystems(), q.len())?;
    let mut eb = plant.b().clone();
    for (i, &qi) in q.as_slice().iter().enumerate() {
        let r = plant.input_range(i);
        eb.columns_mut(r.start, r.len()).scale_mut(qi);
    }
    Ok(eb)
}

/// `E{Δ B' K B Δ}`: block `(i, j)` of `B'KB` scaled by `q_i q_j` off the
/// diagonal and by `q_i` on it (`δ² = δ`).
pub fn expected_bkb(plant: &PlantModel, k: &DMatrix<f64>, q: &ClosureProbabilities) -> Result<DMatrix<f64>> {
    check_len("closure probabilities", plant.subsystems(), q.len())?;
    check_len("K rows", plant.state_dim(), k.nrows())?;
    let b = plant.b();
    let mut bkb = b.transpose() * k * b;
    let q = q.as_slice();
    for i in 0..q.len() {
        let ri = plant.input_range(i);
        for j in 0..q.len() {
            let rj = plant.input_range(j);
            let c = if i == j { q[i] } else { q[i] * q[j] };
            bkb.view_mut((ri.start, rj.start), (ri.len(), rj.len())).scale_mut(c);
        }
    }
    Ok(bkb)
}

/// One step of the lossy Riccati recursion:
/// `A'KA + W - A'K E{BΔ} (R + E{ΔB'KBΔ})^{-1} E{BΔ}' K A`, symmetrized.
pub fn riccati_iterate(plant: &PlantModel, q: &ClosureProbabilities, k_next: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let a = plant.a();
    let eb = expected_b(plant, q)?;
    let inner = plant.r() + expected_bkb(plant, k_next, q)?;
    let ka = k_next * a;
    let cross = eb.transpose() * &ka;
    let gain = linalg::solve_spd(&inner, &cross)?;
    let k = a.transpose() * &ka + plant.w() - cross.transpose() * gain;
    Ok(linalg::symmetrize(&k))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RiccatiOptions {
    /// Convergence threshold on the max-abs element change between iterates.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Iterates with max-abs element above this are declared divergent.
    pub blowup_cap: f64,
}

impl Default for RiccatiOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-9,
            max_iterations: 10_000,
            blowup_cap: 1e12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    pub k: DMatrix<f64>,
    /// Max-abs element change of the final iteration.
    pub residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SteadyStateFailure {
    /// Iterates exceeded the magnitude cap.
    BlowUp { iterations: usize, magnitude: f64 },
    /// Iteration budget ran out while still moving.
    NotConverged { iterations: usize, residual: f64 },
    Numerical(String),
}

impl fmt::Display for SteadyStateFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::BlowUp { iterations, magnitude } => {
                write!(f, "iterates blew up to {magnitude:e} after {iterations} iterations")
            }
            Self::NotConverged { iterations, residual } => {
                write!(f, "no convergence after {iterations} iterations (last change {residual:e})")
            }
            Self::Numerical(m) => write!(f, "{m}"),
        }
    }
}

/// Fixed point of [`riccati_iterate`], iterated from `K = W`.
pub fn solve_steady_state(
    plant: &PlantModel,
    q: &ClosureProbabilities,
    opts: &RiccatiOptions,
) -> std::result::Result<RiccatiSolution, SteadyStateFailure> {
    let mut k = plant.w().clone();
    let mut residual = f64::INFINITY;
    for it in 1..=opts.max_iterations {
        let next = riccati_iterate(plant, q, &k).map_err(|e| SteadyStateFailure::Numerical(e.to_string()))?;
        let magnitude = linalg::max_abs(&next);
        if !magnitude.is_finite() || magnitude > opts.blowup_cap {
            return Err(SteadyStateFailure::BlowUp {
                iterations: it,
                magnitude,
            });
        }
        residual = linalg::max_abs(&(&next - &k));
        k = next;
        if residual < opts.tolerance {
            return Ok(RiccatiSolution {
                k,
                residual,
                iterations: it,
            });
        }
    }
    Err(SteadyStateFailure::NotConverged {
        iterations: opts.max_iterations,
        residual,
    })
}

/// `horizon` steps of the recursion from `K = W`; the last iterate.
pub fn finite_horizon(plant: &PlantModel, q: &ClosureProbabilities, horizon: usize) -> Result<DMatrix<f64>> {
    let mut k = plant.w().clone();
    for _ in 0..horizon {
        k = riccati_iterate(plant, q, &k)?;
    }
    Ok(k)
}

/// Spectral radius of `ΓA` with `Γ = diag(sqrt(1 - q_i) I_{n_i})`. Below 1
/// the lossy recursion has a steady state; the condition is only sufficient.
pub fn convergence_margin(a: &DMatrix<f64>, state_dims: &[usize], q: &ClosureProbabilities) -> Result<f64> {
    check_len("closure probabilities", state_dims.len(), q.len())?;
    check_len("A rows", state_dims.iter().sum(), a.nrows())?;
    let mut ga = a.clone();
    let offs = linalg::offsets(state_dims);
    for (i, &qi) in q.as_slice().iter().enumerate() {
        ga.rows_mut(offs[i], state_dims[i]).scale_mut((1.0 - qi).sqrt());
    }
    Ok(linalg::spectral_radius(&ga))
}

/// `q_i = 1 - prod_{j: a_j = i} (1 - s_j)`; zero for unscheduled subsystems.
pub fn closure_probs_for_action(
    action: &ScheduleAction,
    channel_success: &[f64],
    subsystems: usize,
) -> Result<ClosureProbabilities> {
    check_len("channel success estimates", action.len(), channel_success.len())?;
    let mut fail = vec![1.0; subsystems];
    for (j, &i) in action.as_slice().iter().enumerate() {
        if i >= subsystems {
            return Err(Error::Config(format!("action targets subsystem {} of {subsystems}", i + 1)));
        }
        fail[i] *= 1.0 - channel_success[j];
    }
    ClosureProbabilities::new(fail.into_iter().map(|f| 1.0 - f).collect())
}

/// Gain `L` with `u = -L x`: `(R + E{ΔB'KBΔ})^{-1} E{BΔ}' K A`.
pub fn lossy_gain(plant: &PlantModel, k: &DMatrix<f64>, q: &ClosureProbabilities) -> Result<DMatrix<f64>> {
    let inner = plant.r() + expected_bkb(plant, k, q)?;
    let cross = expected_b(plant, q)?.transpose() * k * plant.a();
    linalg::solve_spd(&inner, &cross)
}

/// One-step look-ahead candidate inputs for the chosen schedule, with
/// closure probabilities built from the per-channel estimates.
pub fn compute_candidate_controls(
    plant: &PlantModel,
    k_inf: Option<&DMatrix<f64>>,
    x: &DVector<f64>,
    action: &ScheduleAction,
    channel_success: &[f64],
) -> Result<DVector<f64>> {
    let k = k_inf.ok_or(Error::ControllerUnavailable)?;
    check_len("state", plant.state_dim(), x.len())?;
    let q = closure_probs_for_action(action, channel_success, plant.subsystems())?;
    Ok(-(lossy_gain(plant, k, &q)? * x))
}

/// Moving-average success estimates: per channel (outcome of each use) and
/// per subsystem (closure flag every step).
#[derive(Debug, Clone, PartialEq)]
pub struct SuccessRateEstimator {
    window: usize,
    prior: f64,
    channels: Vec<VecDeque<bool>>,
    subsystems: Vec<VecDeque<bool>>,
}

impl SuccessRateEstimator {
    pub fn new(channels: usize, subsystems: usize, window: usize, prior: f64) -> Self {
        Self {
            window: window.max(1),
            prior,
            channels: vec![VecDeque::new(); channels],
            subsystems: vec![VecDeque::new(); subsystems],
        }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    fn mean(window: &VecDeque<bool>, prior: f64) -> f64 {
        if window.is_empty() {
            prior
        } else {
            window.iter().filter(|&&b| b).count() as f64 / window.len() as f64
        }
    }

    fn push(window: &mut VecDeque<bool>, v: bool, cap: usize) {
        window.push_back(v);
        while window.len() > cap {
            window.pop_front();
        }
    }

    /// `acks[j]` is the outcome of channel `j` this step. Every channel
    /// carries a packet under any schedule, so every channel is updated.
    pub fn update(&mut self, acks: &[bool], mask: &SuccessMask) -> Result<()> {
        check_len("channel acknowledgments", self.channels.len(), acks.len())?;
        check_len("success mask", self.subsystems.len(), mask.len())?;
        for (w, &ok) in self.channels.iter_mut().zip(acks) {
            Self::push(w, ok, self.window);
        }
        for (w, &ok) in self.subsystems.iter_mut().zip(&mask.0) {
            Self::push(w, ok, self.window);
        }
        Ok(())
    }

    pub fn channel_success(&self) -> Vec<f64> {
        self.channels.iter().map(|w| Self::mean(w, self.prior)).collect()
    }

    pub fn closure_rates(&self) -> ClosureProbabilities {
        ClosureProbabilities(self.subsystems.iter().map(|w| Self::mean(w, self.prior)).collect())
    }

    pub fn to_matrix_file(&self, f: &mut MatrixFile) {
        f.push_row("channel_success", &self.channel_success());
        f.push_row("closure_rates", self.closure_rates().as_slice());
    }
}
