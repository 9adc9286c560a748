#![allow(dead_code)]

use dira_core::dira::{code_width, input_width};
use dira_core::{PlantModel, QNetwork};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn gaussian<R: Rng>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| {
        scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
    })
}

pub fn random_spd<R: Rng>(n: usize, floor: f64, rng: &mut R) -> DMatrix<f64> {
    let l = gaussian(n, n, 1.0, rng);
    &l * l.transpose() / n as f64 + DMatrix::identity(n, n) * floor
}

/// Dense random plant: subsystem state sizes in 1..=2, one input each,
/// arbitrary SPD weights. Redrawn until controllable and observable.
pub fn random_plant<R: Rng>(subsystems: usize, spread: f64, rng: &mut R) -> PlantModel {
    loop {
        let dims: Vec<usize> = (0..subsystems).map(|_| rng.random_range(1..=2)).collect();
        let n: usize = dims.iter().sum();
        let a = gaussian(n, n, spread / (n as f64).sqrt(), rng);
        let b_blocks: Vec<DMatrix<f64>> = dims.iter().map(|&d| gaussian(d, 1, 1.0, rng)).collect();
        let noise = dims.iter().map(|&d| DMatrix::identity(d, d) * 0.01).collect();
        let w = random_spd(n, 0.1, rng);
        let r = random_spd(subsystems, 0.5, rng);
        let plant = PlantModel::new(a, b_blocks, w, r, noise).expect("well-formed plant");
        if plant.is_controllable() && plant.is_observable() {
            return plant;
        }
    }
}

/// Classical DARE `P = A'PA - A'PB (R + B'PB)^{-1} B'PA + Q` by the
/// structure-preserving doubling algorithm, a different method from plain
/// fixed-point iteration.
pub fn dare_doubling(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let r_inv = r.clone().try_inverse().expect("R invertible");
    let mut ak = a.clone();
    let mut gk = b * r_inv * b.transpose();
    let mut hk = q.clone();
    for _ in 0..100 {
        let w = (&eye + &gk * &hk).try_inverse().expect("I + GH invertible");
        let a_next = &ak * &w * &ak;
        let g_next = &gk + &ak * &w * &gk * ak.transpose();
        let h_next = &hk + ak.transpose() * &hk * &w * &ak;
        let change = (&h_next - &hk).amax();
        ak = a_next;
        gk = (&g_next + g_next.transpose()) * 0.5;
        hk = (&h_next + h_next.transpose()) * 0.5;
        if change <= 1e-14 * hk.amax().max(1.0) {
            break;
        }
    }
    hk
}

/// Network whose greedy choice at fill level `j` of the representation
/// vector is `script[j]` (0-based), whatever the state.
///
/// Hidden unit `j` computes `relu(s_{j-1} - 10 s_j)` where `s_k` is the bit
/// sum of slot `k` (for `j = 0`: `relu(1 - 10 s_0)`), so exactly the unit of
/// the current fill level is positive; output row `script[j]` reads it.
pub fn scripted_network(state_dim: usize, subsystems: usize, script: &[usize]) -> QNetwork {
    let m = script.len();
    let w = code_width(subsystems);
    let input = input_width(state_dim, subsystems, m);
    let hidden = m;
    let mut w1 = vec![0.0; hidden * input];
    let mut b1 = vec![0.0; hidden];
    for j in 0..m {
        let row = &mut w1[j * input..(j + 1) * input];
        for bit in 0..w {
            row[state_dim + j * w + bit] = -10.0;
            if j > 0 {
                row[state_dim + (j - 1) * w + bit] = 1.0;
            }
        }
        if j == 0 {
            b1[0] = 1.0;
        }
    }
    let mut w2 = vec![0.0; subsystems * hidden];
    for (j, &a) in script.iter().enumerate() {
        w2[a * hidden + j] = 1.0;
    }
    let mut params = w1;
    params.extend(b1);
    params.extend(w2);
    params.extend(vec![0.0; subsystems]);
    QNetwork::from_params(input, hidden, subsystems, params).expect("consistent shape")
}
