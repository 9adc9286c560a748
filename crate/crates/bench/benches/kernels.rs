use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use dira_core::dira::{enumerate_joint_actions, input_width, select_action, Exploration};
use dira_core::dqn::{bellman_targets, train_step, AdamState};
use dira_core::harness::baselines::oracle_greedy;
use dira_core::harness::{ExperimentConfig, Scenario};
use dira_core::lqr::{self, ClosureProbabilities, RiccatiOptions};
use dira_core::{AdamConfig, QNetwork, ReplayBuffer, Transition};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scenario(preset: &str) -> Scenario {
    Scenario::from_config(&ExperimentConfig::preset(preset).unwrap()).unwrap()
}

fn riccati(c: &mut Criterion) {
    for preset in ["desk", "n8m6"] {
        let s = scenario(preset);
        let q = ClosureProbabilities::uniform(s.plant.subsystems(), 0.9);
        c.bench_function(&format!("riccati_steady_state/{preset}"), |b| {
            b.iter(|| lqr::solve_steady_state(black_box(&s.plant), &q, &RiccatiOptions::default()))
        });
    }
}

fn dqn_step(c: &mut Criterion) {
    let (input, hidden, output, batch) = (40, 128, 8, 64);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut replay = ReplayBuffer::new(1024, 1);
    for _ in 0..1024 {
        let v = |rng: &mut ChaCha8Rng| (0..input).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        replay.push(Transition {
            state: v(&mut rng),
            action: rng.random_range(0..output),
            reward: -rng.random::<f64>(),
            next_state: v(&mut rng),
            terminal: false,
        });
    }
    let mut net = QNetwork::random(input, hidden, output, &mut rng);
    let target = net.clone();
    let mut adam = AdamState::new(
        AdamConfig {
            learning_rate: 1e-4,
            ..Default::default()
        },
        net.params().len(),
    );
    c.bench_function("dqn_train_step/batch64_hidden128", |b| {
        b.iter(|| {
            let sample = replay.sample(batch, &mut rng).unwrap();
            let y = bellman_targets(&sample, &target, 0.95).unwrap();
            train_step(&mut net, &mut adam, &sample, &y, Some(1.0)).unwrap()
        })
    });
}

fn selection(c: &mut Criterion) {
    let s = scenario("n8m6");
    let (n, m) = (s.plant.subsystems(), s.channels.len());
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let net = QNetwork::random(input_width(s.plant.state_dim(), n, m), 1024, n, &mut rng);
    let x = DVector::from_fn(s.plant.state_dim(), |_, _| rng.random_range(-1.0..1.0));
    c.bench_function("select_action/n8m6_hidden1024", |b| {
        b.iter(|| select_action(black_box(&x), &net, m, 0.0, Exploration::PerStep, &mut rng).unwrap())
    });
}

fn oracle(c: &mut Criterion) {
    let s = scenario("desk");
    let (n, m) = (s.plant.subsystems(), s.channels.len());
    let actions = enumerate_joint_actions(n, m, 1_000_000).unwrap();
    let q = ClosureProbabilities::uniform(n, 1.0);
    let k = lqr::solve_steady_state(&s.plant, &q, &RiccatiOptions::default()).unwrap().k;
    let success = s.true_success();
    let x = DVector::from_element(s.plant.state_dim(), 0.5);
    c.bench_function("oracle_greedy/desk", |b| {
        b.iter(|| oracle_greedy(&s.plant, black_box(&x), &k, &success, &actions).unwrap())
    });
}

criterion_group!(benches, riccati, dqn_step, selection, oracle);
criterion_main!(benches);
