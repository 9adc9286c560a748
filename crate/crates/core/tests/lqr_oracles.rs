mod common;

use dira_core::lqr::{self, ClosureProbabilities, RiccatiOptions};
use dira_core::PlantModel;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Exact expectations by summing over all 2^N delivery patterns.
fn enumerate_expectations(plant: &PlantModel, k: &DMatrix<f64>, q: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = plant.subsystems();
    let m = plant.input_dim();
    let mut eb = DMatrix::zeros(plant.state_dim(), m);
    let mut ebkb = DMatrix::zeros(m, m);
    for pattern in 0u32..(1 << n) {
        let mut p = 1.0;
        let mut delta = DMatrix::zeros(m, m);
        for i in 0..n {
            let on = pattern >> i & 1 == 1;
            p *= if on { q[i] } else { 1.0 - q[i] };
            if on {
                for c in plant.input_range(i) {
                    delta[(c, c)] = 1.0;
                }
            }
        }
        let bd = plant.b() * &delta;
        eb += &bd * p;
        ebkb += (bd.transpose() * k * &bd) * p;
    }
    (eb, ebkb)
}

#[test]
fn expectations_match_pattern_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10 {
        let n = rng.random_range(1..=4);
        let plant = common::random_plant(n, 1.0, &mut rng);
        let q: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..=1.0)).collect();
        let k = common::random_spd(plant.state_dim(), 0.1, &mut rng);
        let cp = ClosureProbabilities::new(q.clone()).unwrap();
        let (eb, ebkb) = enumerate_expectations(&plant, &k, &q);
        assert!((lqr::expected_b(&plant, &cp).unwrap() - eb).amax() < 1e-12);
        assert!((lqr::expected_bkb(&plant, &k, &cp).unwrap() - ebkb).amax() < 1e-10);
    }
}

#[test]
fn riccati_step_minimizes_expected_cost_to_go() {
    // K_k = min_u E{x'Wx + u'Ru + (Ax + BΔu)'K(Ax + BΔu)} as a quadratic in
    // x; recover its entries by polarization from the explicit minimizer.
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..10 {
        let plant = common::random_plant(3, 1.1, &mut rng);
        let q: Vec<f64> = (0..3).map(|_| rng.random_range(0.05..=1.0)).collect();
        let k = common::random_spd(plant.state_dim(), 0.2, &mut rng);
        let (eb, ebkb) = enumerate_expectations(&plant, &k, &q);
        let a = plant.a();
        let value = |x: &DVector<f64>| {
            let h = plant.r() + &ebkb;
            let g = eb.transpose() * &k * a * x;
            let u = -h.clone().try_inverse().unwrap() * &g;
            let ax = a * x;
            x.dot(&(plant.w() * x)) + u.dot(&(&h * &u)) + 2.0 * u.dot(&g) + ax.dot(&(&k * &ax))
        };
        let nx = plant.state_dim();
        let mut oracle = DMatrix::zeros(nx, nx);
        for i in 0..nx {
            for j in 0..nx {
                let ei = DVector::from_fn(nx, |r, _| f64::from(u8::from(r == i)));
                let ej = DVector::from_fn(nx, |r, _| f64::from(u8::from(r == j)));
                oracle[(i, j)] = 0.5 * (value(&(&ei + &ej)) - value(&ei) - value(&ej));
            }
        }
        let got = lqr::riccati_iterate(&plant, &ClosureProbabilities::new(q).unwrap(), &k).unwrap();
        let scale = oracle.amax().max(1.0);
        assert!((got - &oracle).amax() / scale < 1e-10);
    }
}

#[test]
fn scalar_step_by_hand() {
    let plant = PlantModel::new(
        DMatrix::from_element(1, 1, 1.2),
        vec![DMatrix::from_element(1, 1, 1.0)],
        DMatrix::identity(1, 1),
        DMatrix::identity(1, 1),
        vec![DMatrix::identity(1, 1)],
    )
    .unwrap();
    let k = lqr::riccati_iterate(&plant, &ClosureProbabilities::uniform(1, 0.5), &DMatrix::identity(1, 1)).unwrap();
    assert!((k[(0, 0)] - 2.2).abs() < 1e-12);
}

#[test]
fn finite_horizon_approaches_steady_state() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let plant = common::random_plant(3, 0.9, &mut rng);
    let q = ClosureProbabilities::uniform(3, 0.8);
    let sol = lqr::solve_steady_state(&plant, &q, &RiccatiOptions::default()).unwrap();
    let k = lqr::finite_horizon(&plant, &q, sol.iterations + 50).unwrap();
    assert!((k - &sol.k).amax() < 1e-8);
}

#[test]
fn closed_loop_cost_matches_trace_formula() {
    // Under u = -Lx with i.i.d. dropouts, the long-run average of
    // x'Wx + u'Ru (commanded u) equals tr(K Sigma_w).
    let plant = PlantModel::new(
        DMatrix::from_row_slice(2, 2, &[1.1, 0.3, 0.0, 0.7]),
        vec![DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, 0.8)],
        DMatrix::identity(2, 2),
        DMatrix::identity(2, 2) * 0.5,
        vec![DMatrix::identity(1, 1), DMatrix::identity(1, 1) * 0.5],
    )
    .unwrap();
    let q = [0.85, 0.6];
    let cp = ClosureProbabilities::new(q.to_vec()).unwrap();
    let k = lqr::solve_steady_state(&plant, &cp, &RiccatiOptions::default()).unwrap().k;
    let l = lqr::lossy_gain(&plant, &k, &cp).unwrap();
    let expected = (&k * plant.noise_cov_full()).trace();

    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut x = DVector::zeros(2);
    let (burn, steps) = (1_000, 400_000);
    let mut total = 0.0;
    for t in 0..burn + steps {
        let u = -(&l * &x);
        if t >= burn {
            total += x.dot(&(plant.w() * &x)) + u.dot(&(plant.r() * &u));
        }
        let mask = dira_core::SuccessMask(q.iter().map(|&p| rng.random_bool(p)).collect());
        let applied = plant.apply_dropouts(&u, &mask).unwrap();
        x = plant.step(&x, &applied, &plant.sample_noise(&mut rng)).unwrap();
    }
    let avg = total / steps as f64;
    assert!((avg - expected).abs() / expected < 0.03, "average {avg} vs {expected}");
}

#[test]
fn margin_below_one_implies_convergence() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut checked = 0;
    for _ in 0..40 {
        let plant = common::random_plant(3, 1.6, &mut rng);
        let q = ClosureProbabilities::new((0..3).map(|_| rng.random_range(0.3..=1.0)).collect()).unwrap();
        let margin = lqr::convergence_margin(plant.a(), &plant.state_dims(), &q).unwrap();
        if margin < 0.99 {
            checked += 1;
            assert!(lqr::solve_steady_state(&plant, &q, &RiccatiOptions::default()).is_ok());
        }
    }
    assert!(checked > 5);
}
