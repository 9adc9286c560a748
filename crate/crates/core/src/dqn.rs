//! Deep Q-learning engine: a one-hidden-layer rectifier network, Adam,
//! uniform experience replay, and a softly-updated target network.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::textfmt::MatrixFile;
use nalgebra::DMatrix;

/// `affine -> relu -> affine`. Parameters live in one flat vector laid out
/// as `[w1 (hidden x input, row-major) | b1 | w2 (output x hidden) | b2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    input: usize,
    hidden: usize,
    output: usize,
    params: Vec<f64>,
}

impl QNetwork {
    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        let len = hidden * input + hidden + output * hidden + output;
        Self {
            input,
            hidden,
            output,
            params: vec![0.0; len],
        }
    }

    /// He-style uniform fan-in init for the hidden layer; the output layer is
    /// drawn from `±1e-3` so initial Q-values are close to zero.
    pub fn random<R: Rng + ?Sized>(input: usize, hidden: usize, output: usize, rng: &mut R) -> Self {
        let mut net = Self::zeros(input, hidden, output);
        let bound = (6.0 / input.max(1) as f64).sqrt();
        let (w1, _, w2, _) = net.offsets();
        for v in &mut net.params[w1.clone()] {
            *v = rng.random_range(-bound..bound);
        }
        for v in &mut net.params[w2] {
            *v = rng.random_range(-1e-3..1e-3);
        }
        net
    }

    pub fn from_params(input: usize, hidden: usize, output: usize, params: Vec<f64>) -> Result<Self> {
        let net = Self::zeros(input, hidden, output);
        check_len("network parameters", net.params.len(), params.len())?;
        Ok(Self { params, ..net })
    }

    pub fn input_width(&self) -> usize {
        self.input
    }

    pub fn hidden_width(&self) -> usize {
        self.hidden
    }

    pub fn output_width(&self) -> usize {
        self.output
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn offsets(
        &self,
    ) -> (
        std::ops::Range<usize>,
        std::ops::Range<usize>,
        std::ops::Range<usize>,
        std::ops::Range<usize>,
    ) {
        let w1 = 0..self.hidden * self.input;
        let b1 = w1.end..w1.end + self.hidden;
        let w2 = b1.end..b1.end + self.output * self.hidden;
        let b2 = w2.end..w2.end + self.output;
        (w1, b1, w2, b2)
    }

    fn hidden_pre(&self, s: &[f64], out: &mut [f64]) {
        let (w1, b1, _, _) = self.offsets();
        let w1 = &self.params[w1];
        let b1 = &self.params[b1];
        for h in 0..self.hidden {
            let row = &w1[h * self.input..(h + 1) * self.input];
            out[h] = b1[h] + row.iter().zip(s).map(|(w, x)| w * x).sum::<f64>();
        }
    }

    fn output_from_hidden(&self, act: &[f64], out: &mut [f64]) {
        let (_, _, w2, b2) = self.offsets();
        let w2 = &self.params[w2];
        let b2 = &self.params[b2];
        for o in 0..self.output {
            let row = &w2[o * self.hidden..(o + 1) * self.hidden];
            out[o] = b2[o] + row.iter().zip(act).map(|(w, h)| w * h).sum::<f64>();
        }
    }

    pub fn forward(&self, s: &[f64]) -> Result<Vec<f64>> {
        check_len("network input", self.input, s.len())?;
        let mut hidden = vec![0.0; self.hidden];
        self.hidden_pre(s, &mut hidden);
        hidden.iter_mut().for_each(|v| *v = v.max(0.0));
        let mut out = vec![0.0; self.output];
        self.output_from_hidden(&hidden, &mut out);
        Ok(out)
    }

    /// Mean squared Bellman loss over the taken actions.
    pub fn loss(&self, batch: &[&Transition], targets: &[f64]) -> Result<f64> {
        check_len("targets", batch.len(), targets.len())?;
        let mut total = 0.0;
        for (t, y) in batch.iter().zip(targets) {
            let q = self.forward(&t.state)?;
            total += (q[t.action] - y).powi(2);
        }
        Ok(total / batch.len() as f64)
    }

    /// Loss and its gradient with respect to every parameter; the targets are
    /// constants and only the taken action's output receives gradient.
    pub fn loss_and_gradient(&self, batch: &[&Transition], targets: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_len("targets", batch.len(), targets.len())?;
        if batch.is_empty() {
            return Err(Error::TrainingFault("empty minibatch".into()));
        }
        let (w1r, b1r, w2r, b2r) = self.offsets();
        let mut grad = vec![0.0; self.params.len()];
        let mut pre = vec![0.0; self.hidden];
        let mut act = vec![0.0; self.hidden];
        let mut q = vec![0.0; self.output];
        let scale = 2.0 / batch.len() as f64;
        let mut total = 0.0;

        for (t, &y) in batch.iter().zip(targets) {
            check_len("network input", self.input, t.state.len())?;
            if t.action >= self.output {
                return Err(Error::TrainingFault(format!("action {} out of range", t.action)));
            }
            self.hidden_pre(&t.state, &mut pre);
            for (a, p) in act.iter_mut().zip(&pre) {
                *a = p.max(0.0);
            }
            self.output_from_hidden(&act, &mut q);
            let err = q[t.action] - y;
            total += err * err;
            let dq = scale * err;

            let w2_row = w2r.start + t.action * self.hidden;
            for h in 0..self.hidden {
                grad[w2_row + h] += dq * act[h];
            }
            grad[b2r.start + t.action] += dq;
            for h in 0..self.hidden {
                if pre[h] <= 0.0 {
                    continue;
                }
                let dz = dq * self.params[w2_row + h];
                grad[b1r.start + h] += dz;
                let row = w1r.start + h * self.input;
                for (g, x) in grad[row..row + self.input].iter_mut().zip(&t.state) {
                    *g += dz * x;
                }
            }
        }
        Ok((total / batch.len() as f64, grad))
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|v| v.is_finite())
    }

    pub fn to_matrix_file(&self, f: &mut MatrixFile) {
        let (w1, b1, w2, b2) = self.offsets();
        f.push_row("net_shape", &[self.input as f64, self.hidden as f64, self.output as f64]);
        f.push("w1", DMatrix::from_row_slice(self.hidden, self.input, &self.params[w1]));
        f.push_row("b1", &self.params[b1]);
        f.push("w2", DMatrix::from_row_slice(self.output, self.hidden, &self.params[w2]));
        f.push_row("b2", &self.params[b2]);
    }

    pub fn from_matrix_file(f: &MatrixFile) -> Result<Self> {
        let shape = f.require_row("net_shape")?;
        check_len("net_shape", 3, shape.len())?;
        let (input, hidden, output) = (shape[0] as usize, shape[1] as usize, shape[2] as usize);
        let mut params = Vec::new();
        for name in ["w1", "w2"] {
            let m = f.require(name)?;
            // row-major, matching the in-memory layout
            let (rows, cols) = if name == "w1" { (hidden, input) } else { (output, hidden) };
            check_len(if name == "w1" { "w1 rows" } else { "w2 rows" }, rows, m.nrows())?;
            check_len(if name == "w1" { "w1 cols" } else { "w2 cols" }, cols, m.ncols())?;
            let block: Vec<f64> = (0..rows).flat_map(|r| (0..cols).map(move |c| m[(r, c)])).collect();
            params.extend(block);
            params.extend(f.require_row(if name == "w1" { "b1" } else { "b2" })?);
        }
        Self::from_params(input, hidden, output, params)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-6,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, len: usize) -> Self {
        Self {
            config,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Bias-corrected Adam update in place.
    pub fn apply(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        check_len("Adam parameters", self.m.len(), params.len())?;
        check_len("Adam gradient", self.m.len(), grad.len())?;
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            epsilon: eps,
        } = self.config;
        self.t += 1;
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * grad[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// One stored interaction. States are encoded network inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
}

/// FIFO ring buffer with uniform sampling with replacement.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    warmup: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, warmup: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            warmup: warmup.max(1),
            items: VecDeque::with_capacity(capacity.min(1 << 20)),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn is_ready(&self) -> bool {
        self.items.len() >= self.warmup
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<&Transition>> {
        if !self.is_ready() {
            return Err(Error::NotReady {
                len: self.items.len(),
                needed: self.warmup,
            });
        }
        Ok((0..batch_size)
            .map(|_| &self.items[rng.random_range(0..self.items.len())])
            .collect())
    }
}

/// `y = r + γ max_a' Q_target(s', a')`, or `y = r` for terminal transitions.
pub fn bellman_targets(batch: &[&Transition], target: &QNetwork, gamma: f64) -> Result<Vec<f64>> {
    batch
        .iter()
        .map(|t| {
            if t.terminal || gamma == 0.0 {
                return Ok(t.reward);
            }
            let q = target.forward(&t.next_state)?;
            let best = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            Ok(t.reward + gamma * best)
        })
        .collect()
}

/// One Adam step on the squared Bellman loss; returns the pre-step loss.
/// `clip` rescales the gradient to at most that Euclidean norm.
pub fn train_step(
    net: &mut QNetwork,
    adam: &mut AdamState,
    batch: &[&Transition],
    targets: &[f64],
    clip: Option<f64>,
) -> Result<f64> {
    let (loss, mut grad) = net.loss_and_gradient(batch, targets)?;
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::TrainingFault(format!("non-finite loss or gradient (loss {loss})")));
    }
    if let Some(max_norm) = clip {
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm > max_norm {
            grad.iter_mut().for_each(|g| *g *= max_norm / norm);
        }
    }
    adam.apply(net.params_mut(), &grad)?;
    if !net.is_finite() {
        return Err(Error::TrainingFault("weights became non-finite".into()));
    }
    Ok(loss)
}

/// `θ_target <- (1 - τ) θ_target + τ θ`.
pub fn soft_update(target: &mut QNetwork, online: &QNetwork, tau: f64) -> Result<()> {
    check_len("target parameters", online.params.len(), target.params.len())?;
    for (t, o) in target.params.iter_mut().zip(&online.params) {
        *t = (1.0 - tau) * *t + tau * o;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub epsilon: f64,
    pub min: f64,
    pub rate: f64,
}

impl EpsilonSchedule {
    pub fn new(start: f64, min: f64, rate: f64) -> Self {
        Self {
            epsilon: start.clamp(min, 1.0),
            min,
            rate,
        }
    }

    pub fn step(&mut self) {
        self.epsilon = (self.epsilon * self.rate).max(self.min);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tr(state: Vec<f64>, action: usize, reward: f64, next: Vec<f64>) -> Transition {
        Transition {
            state,
            action,
            reward,
            next_state: next,
            terminal: false,
        }
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = QNetwork::zeros(3, 5, 2);
        assert_eq!(net.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
        assert!(net.forward(&[1.0]).is_err());
    }

    #[test]
    fn hand_set_single_unit() {
        // hidden = max(0, 2x - 1), out = 3 h + 0.5
        let net = QNetwork::from_params(1, 1, 1, vec![2.0, -1.0, 3.0, 0.5]).unwrap();
        assert_eq!(net.forward(&[2.0]).unwrap(), vec![3.0 * 3.0 + 0.5]);
        assert_eq!(net.forward(&[0.25]).unwrap(), vec![0.5]);
    }

    #[test]
    fn myopic_and_zero_bootstrap_targets() {
        let t = tr(vec![1.0], 0, -2.0, vec![0.5]);
        let net = QNetwork::random(1, 4, 2, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(bellman_targets(&[&t], &net, 0.0).unwrap(), vec![-2.0]);
        assert_eq!(bellman_targets(&[&t], &QNetwork::zeros(1, 4, 2), 0.9).unwrap(), vec![-2.0]);
    }

    #[test]
    fn hand_targets() {
        // identity-ish two-output net: q = (relu(s0), relu(s1))
        let net = QNetwork::from_params(2, 2, 2, vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let batch = [
            tr(vec![0.0, 0.0], 0, 1.0, vec![2.0, 3.0]),
            tr(vec![0.0, 0.0], 1, -1.0, vec![5.0, -1.0]),
            Transition {
                terminal: true,
                ..tr(vec![0.0, 0.0], 1, 4.0, vec![9.0, 9.0])
            },
        ];
        let refs: Vec<&Transition> = batch.iter().collect();
        let y = bellman_targets(&refs, &net, 0.5).unwrap();
        assert_eq!(y, vec![1.0 + 0.5 * 3.0, -1.0 + 0.5 * 5.0, 4.0]);
    }

    #[test]
    fn fixed_point_leaves_weights_unchanged() {
        let mut net = QNetwork::random(3, 6, 2, &mut ChaCha8Rng::seed_from_u64(4));
        let batch = [tr(vec![0.1, 0.2, 0.3], 1, 0.0, vec![0.0; 3])];
        let refs: Vec<&Transition> = batch.iter().collect();
        let y = vec![net.forward(&batch[0].state).unwrap()[1]];
        let before = net.clone();
        let mut adam = AdamState::new(AdamConfig::default(), net.params().len());
        let loss = train_step(&mut net, &mut adam, &refs, &y, None).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(net, before);
    }

    #[test]
    fn adam_sign_step() {
        // β1 = β2 = 0: update = lr * g / (|g| + eps)
        let cfg = AdamConfig {
            learning_rate: 0.1,
            beta1: 0.0,
            beta2: 0.0,
            epsilon: 1e-8,
        };
        let mut adam = AdamState::new(cfg, 1);
        let mut p = [1.0];
        adam.apply(&mut p, &[4.0]).unwrap();
        assert!((p[0] - (1.0 - 0.1 * 4.0 / (4.0 + 1e-8))).abs() < 1e-15);
    }

    #[test]
    fn soft_update_cases() {
        let mut target = QNetwork::from_params(1, 1, 1, vec![0.0; 4]).unwrap();
        let online = QNetwork::from_params(1, 1, 1, vec![1.0; 4]).unwrap();
        soft_update(&mut target, &online, 0.005).unwrap();
        assert!(target.params().iter().all(|&v| (v - 0.005).abs() < 1e-18));
        soft_update(&mut target, &online, 1.0).unwrap();
        assert_eq!(target, online);
        let copy = target.clone();
        soft_update(&mut target, &online, 0.3).unwrap();
        assert_eq!(target, copy);
    }

    #[test]
    fn replay_ring_semantics() {
        let mut buf = ReplayBuffer::new(3, 1);
        for i in 0..4 {
            buf.push(tr(vec![i as f64], 0, 0.0, vec![0.0]));
        }
        assert_eq!(buf.len(), 3);
        assert!(buf.iter().all(|t| t.state[0] != 0.0));
    }

    #[test]
    fn replay_single_item_and_not_ready() {
        let mut buf = ReplayBuffer::new(10, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(buf.sample(4, &mut rng), Err(Error::NotReady { .. })));
        buf.push(tr(vec![7.0], 0, 0.0, vec![0.0]));
        let s = buf.sample(40, &mut rng).unwrap();
        assert_eq!(s.len(), 40);
        assert!(s.iter().all(|t| t.state[0] == 7.0));
    }

    #[test]
    fn epsilon_schedule() {
        let mut s = EpsilonSchedule::new(1.0, 0.001, 1.0);
        s.step();
        assert_eq!(s.epsilon, 1.0);
        let mut s = EpsilonSchedule::new(0.001, 0.001, 0.5);
        s.step();
        assert_eq!(s.epsilon, 0.001);
        let mut s = EpsilonSchedule::new(1.0, 0.001, 0.99995);
        for _ in 0..10_000 {
            s.step();
        }
        assert!((s.epsilon - 0.99995f64.powi(10_000)).abs() < 1e-9);
        assert!((s.epsilon - 0.6065).abs() < 1e-4);
    }

    #[test]
    fn checkpoint_round_trip() {
        let net = QNetwork::random(4, 3, 2, &mut ChaCha8Rng::seed_from_u64(8));
        let mut f = MatrixFile::new();
        net.to_matrix_file(&mut f);
        let back = QNetwork::from_matrix_file(&MatrixFile::parse(&f.to_text()).unwrap()).unwrap();
        assert_eq!(back, net);
    }
}
