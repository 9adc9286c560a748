//! Iterative schedule construction.
//!
//! A joint schedule `a = (a_1, ..., a_M)` over `N^M` choices is assembled
//! one channel at a time. Between environment steps the plant state `x` is
//! frozen and a representation vector `h` records the choices made so far;
//! the Q-network scores the `N` subsystems for the next channel from
//! `(x, h)`. All intermediate states of one step share `x` and the step's
//! reward.
//!
//! Subsystems are 0-based in memory. The binary code of component `j` is the
//! 1-based subsystem number, so an all-zero code always means "not yet
//! assigned".

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dqn::{QNetwork, ReplayBuffer, Transition};
use crate::error::{check_len, Error, Result};
use crate::plant::PlantModel;

/// Channel `j` serves subsystem `a[j]` (0-based).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ScheduleAction(Vec<usize>);

impl ScheduleAction {
    pub fn new(assignment: Vec<usize>, subsystems: usize) -> Result<Self> {
        if let Some(&bad) = assignment.iter().find(|&&i| i >= subsystems) {
            return Err(Error::Config(format!(
                "schedule assigns subsystem {} but only {subsystems} exist",
                bad + 1
            )));
        }
        Ok(Self(assignment))
    }

    pub fn from_one_based(values: &[usize], subsystems: usize) -> Result<Self> {
        if values.contains(&0) {
            return Err(Error::Config("1-based schedule contains 0".into()));
        }
        Self::new(values.iter().map(|v| v - 1).collect(), subsystems)
    }

    pub fn one_based(&self) -> Vec<usize> {
        self.0.iter().map(|v| v + 1).collect()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Bits per component: enough for the values `0..=N` (0 = unassigned).
pub fn code_width(subsystems: usize) -> usize {
    (usize::BITS - subsystems.leading_zeros()) as usize
}

/// Big-endian `width`-bit code of `value` (1-based subsystem number).
pub fn encode_component(value: usize, subsystems: usize) -> Result<Vec<u8>> {
    if value == 0 || value > subsystems {
        return Err(Error::Config(format!("component value {value} outside 1..={subsystems}")));
    }
    let width = code_width(subsystems);
    Ok((0..width).rev().map(|b| ((value >> b) & 1) as u8).collect())
}

pub fn decode_component(bits: &[u8]) -> usize {
    bits.iter().fold(0, |acc, &b| (acc << 1) | b as usize)
}

/// Codes of the components chosen so far within one step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RepresentationVector {
    subsystems: usize,
    channels: usize,
    /// 1-based values; 0 marks an unassigned slot.
    values: Vec<usize>,
    fill: usize,
}

impl RepresentationVector {
    pub fn empty(subsystems: usize, channels: usize) -> Self {
        Self {
            subsystems,
            channels,
            values: vec![0; channels],
            fill: 0,
        }
    }

    pub fn fill(&self) -> usize {
        self.fill
    }

    pub fn is_full(&self) -> bool {
        self.fill == self.channels
    }

    /// Records the next component (0-based subsystem).
    pub fn assign_next(&mut self, subsystem: usize) -> Result<()> {
        if self.is_full() {
            return Err(Error::Config("representation vector already full".into()));
        }
        if subsystem >= self.subsystems {
            return Err(Error::Config(format!("subsystem {} out of range", subsystem + 1)));
        }
        self.values[self.fill] = subsystem + 1;
        self.fill += 1;
        Ok(())
    }

    pub fn bits(&self) -> Vec<u8> {
        let width = code_width(self.subsystems);
        self.values
            .iter()
            .flat_map(|&v| (0..width).rev().map(move |b| ((v >> b) & 1) as u8))
            .collect()
    }

    pub fn bit_string(&self) -> String {
        let width = code_width(self.subsystems);
        self.bits()
            .chunks(width.max(1))
            .map(|c| c.iter().map(|b| char::from(b'0' + b)).collect::<String>())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Network input width for `(x, h)`.
pub fn input_width(state_dim: usize, subsystems: usize, channels: usize) -> usize {
    state_dim + channels * code_width(subsystems)
}

/// `[x | h]` as network input.
pub fn encode_intermediate(x: &DVector<f64>, h: &RepresentationVector) -> Vec<f64> {
    let mut out: Vec<f64> = x.iter().cloned().collect();
    out.extend(h.bits().into_iter().map(f64::from));
    out
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Exploration {
    /// One coin per time-step: the whole schedule is random or greedy.
    #[default]
    PerStep,
    /// One coin per component.
    PerComponent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntermediateStep {
    /// Encoded `(x, h)` before this component was chosen.
    pub input: Vec<f64>,
    pub h_before: String,
    /// 0-based component action.
    pub action: usize,
    pub greedy: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub action: ScheduleAction,
    pub steps: Vec<IntermediateStep>,
}

/// Builds a joint schedule for `channels` channels component by component.
pub fn select_action<R: Rng + ?Sized>(
    x: &DVector<f64>,
    net: &QNetwork,
    channels: usize,
    epsilon: f64,
    exploration: Exploration,
    rng: &mut R,
) -> Result<Selection> {
    let subsystems = net.output_width();
    check_len("network input", input_width(x.len(), subsystems, channels), net.input_width())?;
    let mut h = RepresentationVector::empty(subsystems, channels);
    let step_random = exploration == Exploration::PerStep && rng.random::<f64>() < epsilon;
    let mut steps = Vec::with_capacity(channels);
    for _ in 0..channels {
        let input = encode_intermediate(x, &h);
        let random = match exploration {
            Exploration::PerStep => step_random,
            Exploration::PerComponent => rng.random::<f64>() < epsilon,
        };
        let action = if random {
            rng.random_range(0..subsystems)
        } else {
            argmax(&net.forward(&input)?)
        };
        steps.push(IntermediateStep {
            input,
            h_before: h.bit_string(),
            action,
            greedy: !random,
        });
        h.assign_next(action)?;
    }
    Ok(Selection {
        action: ScheduleAction(steps.iter().map(|s| s.action).collect()),
        steps,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reward {
    /// `-g / scale`, fed to the learner.
    pub value: f64,
    /// `g(x, u)` before scaling.
    pub raw_cost: f64,
}

/// `r = -g(x, u) / scale` for the post-dropout input.
pub fn compute_reward(plant: &PlantModel, x: &DVector<f64>, u_applied: &DVector<f64>, scale: f64) -> Result<Reward> {
    let g = plant.stage_cost(x, u_applied)?;
    Ok(Reward {
        value: -g / scale,
        raw_cost: g,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StorageMode {
    /// Every intermediate gets the step reward and jumps to `(x', 0)`.
    #[default]
    Literal,
    /// Intermediate `j` leads to intermediate `j + 1` with zero reward; only
    /// the last carries the reward and `(x', 0)`.
    Chained,
}

/// Pushes exactly `M` transitions for one environment step.
pub fn store_selection_history(
    buf: &mut ReplayBuffer,
    selection: &Selection,
    reward: f64,
    x_next: &DVector<f64>,
    subsystems: usize,
    mode: StorageMode,
) {
    let channels = selection.steps.len();
    let next_root = encode_intermediate(x_next, &RepresentationVector::empty(subsystems, channels));
    for (j, step) in selection.steps.iter().enumerate() {
        let last = j + 1 == channels;
        let (r, next) = match mode {
            StorageMode::Literal => (reward, next_root.clone()),
            StorageMode::Chained if last => (reward, next_root.clone()),
            StorageMode::Chained => (0.0, selection.steps[j + 1].input.clone()),
        };
        buf.push(Transition {
            state: step.input.clone(),
            action: step.action,
            reward: r,
            next_state: next,
            terminal: false,
        });
    }
}

/// Every schedule in lexicographic order; refuses when `N^M > cap`.
pub fn enumerate_joint_actions(subsystems: usize, channels: usize, cap: u128) -> Result<Vec<ScheduleAction>> {
    let count = (subsystems as u128)
        .checked_pow(channels as u32)
        .unwrap_or(u128::MAX);
    if count > cap {
        return Err(Error::EnumerationCap { count, cap });
    }
    let mut out = Vec::with_capacity(count as usize);
    let mut cur = vec![0usize; channels];
    for _ in 0..count {
        out.push(ScheduleAction(cur.clone()));
        for slot in cur.iter_mut().rev() {
            *slot += 1;
            if *slot < subsystems {
                break;
            }
            *slot = 0;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionTraceRow {
    pub step: usize,
    pub component: usize,
    pub h_before: String,
    pub action: usize,
    pub epsilon: f64,
    pub greedy: bool,
}

impl SelectionTraceRow {
    /// One row per component of `selection`, all 1-based.
    pub fn from_selection(step: usize, selection: &Selection, epsilon: f64) -> Vec<Self> {
        selection
            .steps
            .iter()
            .enumerate()
            .map(|(j, s)| Self {
                step,
                component: j + 1,
                h_before: s.h_before.clone(),
                action: s.action + 1,
                epsilon,
                greedy: s.greedy,
            })
            .collect()
    }
}

pub fn write_selection_trace_csv(rows: &[SelectionTraceRow], path: &std::path::Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn code_widths() {
        assert_eq!(code_width(1), 1);
        assert_eq!(code_width(3), 2);
        assert_eq!(code_width(4), 3);
        assert_eq!(code_width(8), 4);
    }

    #[test]
    fn smallest_code() {
        for n in [1, 2, 5, 16] {
            let bits = encode_component(1, n).unwrap();
            assert_eq!(*bits.last().unwrap(), 1);
            assert!(bits[..bits.len() - 1].iter().all(|&b| b == 0));
        }
        assert!(encode_component(0, 3).is_err());
        assert!(encode_component(4, 3).is_err());
    }

    #[test]
    fn exhaustive_round_trip() {
        for n in 1..=64 {
            for v in 1..=n {
                assert_eq!(decode_component(&encode_component(v, n).unwrap()), v);
            }
        }
    }

    #[test]
    fn fill_sequence_for_two_one_three() {
        let mut h = RepresentationVector::empty(3, 3);
        let mut seen = vec![];
        for v in [2, 1, 3] {
            h.assign_next(v - 1).unwrap();
            seen.push(h.bit_string());
        }
        assert_eq!(seen, ["10 00 00", "10 01 00", "10 01 11"]);
    }

    #[test]
    fn zero_net_ties_pick_first_subsystem() {
        let net = QNetwork::zeros(input_width(2, 3, 4), 5, 3);
        let x = DVector::from_vec(vec![0.5, -0.5]);
        let sel = select_action(&x, &net, 4, 0.0, Exploration::PerStep, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(sel.action.as_slice(), &[0, 0, 0, 0]);
        assert!(sel.steps.iter().all(|s| s.greedy));
    }

    #[test]
    fn reward_sign_and_scale() {
        let p = PlantModel::new(
            DMatrix::identity(2, 2),
            vec![DMatrix::from_element(2, 1, 1.0)],
            DMatrix::identity(2, 2),
            DMatrix::identity(1, 1),
            vec![DMatrix::zeros(2, 2)],
        )
        .unwrap();
        let r = compute_reward(&p, &DVector::from_vec(vec![1.0, 2.0]), &DVector::from_element(1, 1.0), 1.0).unwrap();
        assert_eq!(r.value, -6.0);
        assert_eq!(r.raw_cost, 6.0);
        let z = compute_reward(&p, &DVector::zeros(2), &DVector::zeros(1), 3.0).unwrap();
        assert_eq!(z.value, 0.0);
    }

    #[test]
    fn enumeration() {
        let all = enumerate_joint_actions(2, 2, 1000).unwrap();
        let one: Vec<Vec<usize>> = all.iter().map(|a| a.one_based()).collect();
        assert_eq!(one, vec![vec![1, 1], vec![1, 2], vec![2, 1], vec![2, 2]]);
        assert_eq!(enumerate_joint_actions(3, 2, 1000).unwrap().len(), 9);
        assert_eq!(enumerate_joint_actions(8, 6, 1_000_000).unwrap().len(), 262_144);
        assert!(matches!(
            enumerate_joint_actions(12, 9, 1_000_000),
            Err(Error::EnumerationCap { .. })
        ));
    }

    fn selection(x: &DVector<f64>, n: usize, m: usize, picks: &[usize]) -> Selection {
        let mut h = RepresentationVector::empty(n, m);
        let mut steps = vec![];
        for &a in picks {
            steps.push(IntermediateStep {
                input: encode_intermediate(x, &h),
                h_before: h.bit_string(),
                action: a,
                greedy: true,
            });
            h.assign_next(a).unwrap();
        }
        Selection {
            action: ScheduleAction(picks.to_vec()),
            steps,
        }
    }

    #[test]
    fn storage_single_channel_modes_coincide() {
        let x = DVector::from_vec(vec![1.0]);
        let xn = DVector::from_vec(vec![2.0]);
        let sel = selection(&x, 2, 1, &[1]);
        let mut a = ReplayBuffer::new(10, 1);
        let mut b = ReplayBuffer::new(10, 1);
        store_selection_history(&mut a, &sel, -3.0, &xn, 2, StorageMode::Literal);
        store_selection_history(&mut b, &sel, -3.0, &xn, 2, StorageMode::Chained);
        assert_eq!(a.iter().collect::<Vec<_>>(), b.iter().collect::<Vec<_>>());
        assert_eq!(a.len(), 1);
    }

    #[test]
    fn storage_literal_and_chained() {
        let x = DVector::from_vec(vec![1.0]);
        let xn = DVector::from_vec(vec![2.0]);
        let sel = selection(&x, 3, 3, &[1, 0, 2]);
        let root = encode_intermediate(&xn, &RepresentationVector::empty(3, 3));

        let mut lit = ReplayBuffer::new(10, 1);
        store_selection_history(&mut lit, &sel, -3.0, &xn, 3, StorageMode::Literal);
        assert_eq!(lit.len(), 3);
        assert!(lit.iter().all(|t| t.reward == -3.0 && t.next_state == root && !t.terminal));

        let mut ch = ReplayBuffer::new(10, 1);
        store_selection_history(&mut ch, &sel, -3.0, &xn, 3, StorageMode::Chained);
        let ts: Vec<_> = ch.iter().collect();
        assert_eq!(ts.iter().map(|t| t.reward).collect::<Vec<_>>(), vec![0.0, 0.0, -3.0]);
        assert_eq!(ts[0].next_state, sel.steps[1].input);
        assert_eq!(ts[1].next_state, sel.steps[2].input);
        assert_eq!(ts[2].next_state, root);
    }
}
