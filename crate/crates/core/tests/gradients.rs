mod common;

use common::*;
use hgr_core::agent::CriticSample;
use hgr_core::envs::EnvSpec;
use hgr_core::nn::{BackwardMode, Mlp, OutputActivation};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn spec(state_dim: usize, goal_dim: usize, action_dim: usize) -> EnvSpec {
    EnvSpec {
        state_dim,
        goal_dim,
        action_dim,
        horizon: 10,
    }
}

fn critic_samples(samples: &[Sample]) -> Vec<CriticSample<'_>> {
    samples
        .iter()
        .map(|s| CriticSample {
            state: &s.state,
            action: &s.action,
            next_state: &s.next_state,
            goal: &s.goal,
            reward: s.reward,
        })
        .collect()
}

#[test]
fn batched_forward_matches_naive_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for output in [OutputActivation::Identity, OutputActivation::Tanh] {
        let mlp = Mlp::new(&[5, 7, 3, 4], output, &mut rng).unwrap();
        let xs: Vec<f64> = (0..5 * 9).map(|_| rng.random_range(-2.0..2.0)).collect();
        let batch = mlp.predict_batch(&xs, 9).unwrap();
        for (row, out) in xs.chunks(5).zip(batch.chunks(4)) {
            for (a, b) in naive_forward(&mlp, row).iter().zip(out) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn mlp_backward_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for output in [OutputActivation::Identity, OutputActivation::Tanh] {
        let mlp = Mlp::new(&[4, 6, 6, 3], output, &mut rng).unwrap();
        let xs: Vec<f64> = (0..4 * 5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let coeffs: Vec<f64> = (0..3 * 5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = |net: &Mlp| -> f64 {
            xs.chunks(4)
                .zip(coeffs.chunks(3))
                .map(|(x, c)| naive_forward(net, x).iter().zip(c).map(|(y, c)| y * c).sum::<f64>())
                .sum()
        };
        let cache = mlp.forward_batch(&xs, 5).unwrap();
        let (grads, dx) = mlp.backward_batch(&cache, &coeffs, BackwardMode::FULL).unwrap();
        let numeric = central_diff(&mlp, f, 1e-6);
        for (a, n) in grads.unwrap().values().zip(&numeric) {
            assert!(rel_err(*a, *n) < 1e-4, "{a} vs {n}");
        }
        let dx = dx.unwrap();
        for (r, x) in xs.chunks(4).enumerate() {
            for d in 0..4 {
                let bump = |h: f64| {
                    let mut x2 = x.to_vec();
                    x2[d] += h;
                    naive_forward(&mlp, &x2).iter().zip(&coeffs[r * 3..r * 3 + 3]).map(|(y, c)| y * c).sum::<f64>()
                };
                let n = (bump(1e-6) - bump(-1e-6)) / 2e-6;
                assert!(rel_err(dx[r * 4 + d], n) < 1e-4);
            }
        }
    }
}

#[test]
fn critic_gradient_matches_finite_differences() {
    for seed in 0..8 {
        let spec = spec(3, 2, 2);
        let agent = perturbed_agent(spec, &[16, 16], seed);
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let samples = random_samples(spec, 6, &mut rng);
        let weights: Vec<f64> = (0..6).map(|_| rng.random_range(0.1..1.0)).collect();
        let td = agent.td_errors(&critic_samples(&samples), 0.98).unwrap();
        let (grads, loss) = agent.critic_gradients(&td, &weights).unwrap();
        let oracle_loss = critic_loss_oracle(&agent, &agent.critic, &samples, &weights, 0.98);
        assert!((loss - oracle_loss).abs() < 1e-12);
        let numeric = central_diff(
            &agent.critic,
            |c| critic_loss_oracle(&agent, c, &samples, &weights, 0.98),
            1e-6,
        );
        for (a, n) in grads.values().zip(&numeric) {
            assert!(rel_err(*a, *n) < 1e-4, "seed {seed}: {a} vs {n}");
        }
    }
}

#[test]
fn actor_gradient_matches_finite_differences() {
    for seed in 0..8 {
        let spec = spec(2, 2, 3);
        let agent = perturbed_agent(spec, &[16, 16], seed);
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let samples = random_samples(spec, 5, &mut rng);
        let sg: Vec<(&[f64], &[f64])> = samples.iter().map(|s| (&s.state[..], &s.goal[..])).collect();
        let (grads, objective) = agent.actor_gradients(&sg, 0.7).unwrap();
        let oracle = actor_loss_oracle(&agent, &agent.actor, &samples, 0.7);
        assert!((objective + oracle).abs() < 1e-12);
        let numeric = central_diff(&agent.actor, |a| actor_loss_oracle(&agent, a, &samples, 0.7), 1e-6);
        for (a, n) in grads.values().zip(&numeric) {
            assert!(rel_err(*a, *n) < 1e-4, "seed {seed}: {a} vs {n}");
        }
    }
}

#[test]
fn td_errors_match_independent_oracle() {
    let spec = spec(4, 2, 2);
    let agent = perturbed_agent(spec, &[16, 16], 3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let samples = random_samples(spec, 12, &mut rng);
    for gamma in [0.0, 0.5, 0.98] {
        let td = agent.td_errors(&critic_samples(&samples), gamma).unwrap();
        for (d, s) in td.deltas.iter().zip(&samples) {
            assert!((d - td_oracle(&agent, &agent.critic, s, gamma)).abs() < 1e-12);
        }
    }
}

#[test]
fn critic_regression_converges_on_a_fixed_target() {
    // gamma = 0 turns the critic update into weighted regression onto the rewards
    let spec = spec(2, 2, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut agent = hgr_core::AgentNetworks::new(spec, &[32, 32], &mut rng).unwrap();
    let samples = random_samples(spec, 64, &mut rng);
    let weights = vec![1.0; 64];
    let batch = critic_samples(&samples);
    let first = agent.critic_update(&batch, &weights, 0.0, 1e-2).unwrap();
    let mut last = first.clone();
    for _ in 0..1500 {
        last = agent.critic_update(&batch, &weights, 0.0, 1e-2).unwrap();
    }
    let mse = |d: &[f64]| d.iter().map(|x| x * x).sum::<f64>() / d.len() as f64;
    assert!(mse(&last) < 0.01 * mse(&first), "{} -> {}", mse(&first), mse(&last));
}
