//! Reference schedulers: uniform random, stability-weighted random, and an
//! exhaustive one-step look-ahead oracle.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::dira::ScheduleAction;
use crate::error::{Error, Result};
use crate::linalg;
use crate::lqr;
use crate::plant::PlantModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BaselinePolicy {
    UniformRandom,
    StabilityWeightedRandom,
    OracleGreedy,
    PerfectCommLqr,
}

impl BaselinePolicy {
    pub const ALL: [BaselinePolicy; 4] = [
        Self::UniformRandom,
        Self::StabilityWeightedRandom,
        Self::OracleGreedy,
        Self::PerfectCommLqr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::UniformRandom => "uniform-random",
            Self::StabilityWeightedRandom => "stability-weighted-random",
            Self::OracleGreedy => "oracle-greedy",
            Self::PerfectCommLqr => "perfect-comm-lqr",
        }
    }
}

impl fmt::Display for BaselinePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaselinePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown baseline `{s}`")))
    }
}

pub fn uniform_action<R: Rng + ?Sized>(subsystems: usize, channels: usize, rng: &mut R) -> ScheduleAction {
    ScheduleAction::new((0..channels).map(|_| rng.random_range(0..subsystems)).collect(), subsystems)
        .expect("in range")
}

/// Selection weights `max(spectral_radius(A_ii), 0.1)`, normalized.
pub fn stability_weights(plant: &PlantModel) -> Vec<f64> {
    let raw: Vec<f64> = (0..plant.subsystems())
        .map(|i| linalg::spectral_radius(&plant.a_block(i)).max(0.1))
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Each channel independently picks a subsystem with probability `weights[i]`.
pub fn stability_weighted_random<R: Rng + ?Sized>(weights: &[f64], channels: usize, rng: &mut R) -> ScheduleAction {
    let pick = |rng: &mut R| {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, w) in weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return i;
            }
        }
        weights.len() - 1
    };
    ScheduleAction::new((0..channels).map(|_| pick(rng)).collect(), weights.len()).expect("in range")
}

/// Expected one-step look-ahead cost of `action` with the candidate inputs
/// of the packet-loss-aware controller:
/// `x'Wx + u'Ru + E{x_+' K x_+}` with `x_+ = A x + B Δ u` (noise omitted,
/// it adds the same constant for every action). Closed form in the first
/// and second moments of `Δ`.
pub fn lookahead_cost(
    plant: &PlantModel,
    x: &DVector<f64>,
    k: &DMatrix<f64>,
    action: &ScheduleAction,
    success: &[f64],
) -> Result<f64> {
    let q = lqr::closure_probs_for_action(action, success, plant.subsystems())?;
    let u = lqr::compute_candidate_controls(plant, Some(k), x, action, success)?;
    let ax = plant.a() * x;
    let second = plant.r() + lqr::expected_bkb(plant, k, &q)?;
    let cross = lqr::expected_b(plant, &q)?.transpose() * k * &ax;
    Ok(x.dot(&(plant.w() * x)) + u.dot(&(second * &u)) + 2.0 * cross.dot(&u) + ax.dot(&(k * &ax)))
}

/// The same objective by summing over all `2^N` dropout patterns.
pub fn lookahead_cost_by_patterns(
    plant: &PlantModel,
    x: &DVector<f64>,
    k: &DMatrix<f64>,
    action: &ScheduleAction,
    success: &[f64],
) -> Result<f64> {
    let n = plant.subsystems();
    if n >= 24 {
        return Err(Error::EnumerationCap {
            count: 1u128 << n,
            cap: 1 << 24,
        });
    }
    let q = lqr::closure_probs_for_action(action, success, n)?;
    let u = lqr::compute_candidate_controls(plant, Some(k), x, action, success)?;
    let ax = plant.a() * x;
    let mut expected = 0.0;
    for pattern in 0u32..(1 << n) {
        let mut prob = 1.0;
        let mut applied = u.clone();
        for i in 0..n {
            let on = pattern >> i & 1 == 1;
            prob *= if on { q.as_slice()[i] } else { 1.0 - q.as_slice()[i] };
            if !on {
                let r = plant.input_range(i);
                applied.rows_mut(r.start, r.len()).fill(0.0);
            }
        }
        if prob == 0.0 {
            continue;
        }
        let next = &ax + plant.b() * &applied;
        expected += prob * next.dot(&(k * &next));
    }
    Ok(x.dot(&(plant.w() * x)) + u.dot(&(plant.r() * &u)) + expected)
}

/// Minimizer of [`lookahead_cost`] over `actions`; ties within a relative
/// `1e-12` keep the earliest action.
pub fn oracle_greedy(
    plant: &PlantModel,
    x: &DVector<f64>,
    k: &DMatrix<f64>,
    success: &[f64],
    actions: &[ScheduleAction],
) -> Result<(ScheduleAction, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (idx, a) in actions.iter().enumerate() {
        let c = lookahead_cost(plant, x, k, a, success)?;
        match best {
            Some((_, b)) if c >= b - 1e-12 * b.abs().max(1e-300) => {}
            _ => best = Some((idx, c)),
        }
    }
    let (idx, cost) = best.ok_or_else(|| Error::Config("oracle needs at least one action".into()))?;
    Ok((actions[idx].clone(), cost))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dira::enumerate_joint_actions;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn diag_plant(a: &[f64]) -> PlantModel {
        let n = a.len();
        PlantModel::new(
            DMatrix::from_diagonal(&DVector::from_vec(a.to_vec())),
            (0..n).map(|_| DMatrix::from_element(1, 1, 1.0)).collect(),
            DMatrix::identity(n, n),
            DMatrix::identity(n, n),
            (0..n).map(|_| DMatrix::zeros(1, 1)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn names_round_trip() {
        for p in BaselinePolicy::ALL {
            assert_eq!(p.name().parse::<BaselinePolicy>().unwrap(), p);
        }
        assert!("nope".parse::<BaselinePolicy>().is_err());
    }

    #[test]
    fn identical_blocks_give_uniform_weights() {
        let w = stability_weights(&diag_plant(&[0.7, 0.7, 0.7]));
        assert!(w.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn clipped_weights() {
        let w = stability_weights(&diag_plant(&[1.2, 0.05]));
        assert!((w[0] / w[1] - 12.0).abs() < 1e-12);
    }

    #[test]
    fn oracle_feeds_the_unstable_subsystem() {
        let p = diag_plant(&[1.4, 0.3, 0.2]);
        let k = crate::lqr::solve_steady_state(
            &p,
            &crate::lqr::ClosureProbabilities::uniform(3, 1.0),
            &Default::default(),
        )
        .unwrap()
        .k;
        let x = DVector::from_vec(vec![1.0, 1.0, 1.0]);
        let actions = enumerate_joint_actions(3, 1, 100).unwrap();
        let (a, _) = oracle_greedy(&p, &x, &k, &[0.9], &actions).unwrap();
        assert_eq!(a.as_slice(), &[0]);
    }

    #[test]
    fn symmetric_instance_ties_to_first_action() {
        let p = diag_plant(&[1.1, 1.1]);
        let k = DMatrix::identity(2, 2) * 2.0;
        let x = DVector::from_vec(vec![0.5, 0.5]);
        let single = enumerate_joint_actions(2, 1, 100).unwrap();
        let costs: Vec<f64> = single
            .iter()
            .map(|a| lookahead_cost(&p, &x, &k, a, &[0.9]).unwrap())
            .collect();
        assert!((costs[0] - costs[1]).abs() <= 1e-12 * costs[0]);
        assert_eq!(oracle_greedy(&p, &x, &k, &[0.9], &single).unwrap().0.one_based(), vec![1]);

        let actions = enumerate_joint_actions(2, 2, 100).unwrap();
        let (a, _) = oracle_greedy(&p, &x, &k, &[0.9, 0.9], &actions).unwrap();
        // (1,2) and (2,1) tie and beat (1,1), (2,2); lowest index is (1,2)
        assert_eq!(a.one_based(), vec![1, 2]);
    }

    #[test]
    fn weighted_sampler_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = [2.0 / 3.0, 1.0 / 3.0];
        let n = 100_000;
        let first = (0..n)
            .filter(|_| stability_weighted_random(&w, 1, &mut rng).as_slice()[0] == 0)
            .count() as f64;
        assert!((first / n as f64 - 2.0 / 3.0).abs() < 0.01);
    }
}
