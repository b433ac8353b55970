//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use hgr_core::envs::EnvSpec;
use hgr_core::nn::{Mlp, OutputActivation};
use hgr_core::{AgentNetworks, Episode, Transition};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Row-at-a-time forward pass written directly from the layer weights.
pub fn naive_forward(mlp: &Mlp, x: &[f64]) -> Vec<f64> {
    let layers = mlp.layers();
    let mut a = x.to_vec();
    for (l, layer) in layers.iter().enumerate() {
        let mut z = vec![0.0; layer.out_dim];
        for (o, zo) in z.iter_mut().enumerate() {
            let mut s = layer.biases[o];
            for (i, ai) in a.iter().enumerate() {
                s += layer.weights[o * layer.in_dim + i] * ai;
            }
            *zo = s;
        }
        let last = l + 1 == layers.len();
        a = z
            .into_iter()
            .map(|v| match (last, mlp.output_activation()) {
                (false, _) => v.max(0.0),
                (true, OutputActivation::Identity) => v,
                (true, OutputActivation::Tanh) => v.tanh(),
            })
            .collect();
    }
    a
}

/// First index whose cumulative sum exceeds `u`, skipping empty leaves.
pub fn linear_scan(leaves: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last_live = 0;
    for (i, &p) in leaves.iter().enumerate() {
        if p > 0.0 {
            last_live = i;
            if u < acc + p {
                return i;
            }
        }
        acc += p;
    }
    last_live
}

/// Central differences of `f` with respect to every parameter of `net`, in
/// the order of `Mlp::values`.
pub fn central_diff<F: Fn(&Mlp) -> f64>(net: &Mlp, f: F, h: f64) -> Vec<f64> {
    let n = net.param_count();
    (0..n)
        .map(|k| {
            let mut plus = net.clone();
            *plus.values_mut().nth(k).unwrap() += h;
            let mut minus = net.clone();
            *minus.values_mut().nth(k).unwrap() -= h;
            (f(&plus) - f(&minus)) / (2.0 * h)
        })
        .collect()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

pub fn concat(parts: &[&[f64]]) -> Vec<f64> {
    parts.iter().flat_map(|p| p.iter().copied()).collect()
}

pub struct Sample {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub next_state: Vec<f64>,
    pub goal: Vec<f64>,
    pub reward: f64,
}

pub fn random_samples(spec: EnvSpec, m: usize, rng: &mut ChaCha8Rng) -> Vec<Sample> {
    let mut v = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-1.0..1.0)).collect() };
    (0..m)
        .map(|k| Sample {
            state: v(spec.state_dim),
            action: v(spec.action_dim),
            next_state: v(spec.state_dim),
            goal: v(spec.goal_dim),
            reward: if k % 3 == 0 { 0.0 } else { -1.0 },
        })
        .collect()
}

/// `r + gamma Q'(s', mu'(s'‖g), g) - Q(s, a, g)` with a given critic.
pub fn td_oracle(agent: &AgentNetworks, critic: &Mlp, s: &Sample, gamma: f64) -> f64 {
    let next_a = naive_forward(&agent.target_actor, &concat(&[&s.next_state, &s.goal]));
    let next_q = naive_forward(&agent.target_critic, &concat(&[&s.next_state, &s.goal, &next_a]))[0];
    let q = naive_forward(critic, &concat(&[&s.state, &s.goal, &s.action]))[0];
    s.reward + gamma * next_q - q
}

/// `1/(2M) sum (w_k / max w) delta_k^2` as a function of the critic.
pub fn critic_loss_oracle(
    agent: &AgentNetworks,
    critic: &Mlp,
    samples: &[Sample],
    weights: &[f64],
    gamma: f64,
) -> f64 {
    let max_w = weights.iter().cloned().fold(0.0, f64::max);
    let m = samples.len() as f64;
    samples
        .iter()
        .zip(weights)
        .map(|(s, w)| {
            let d = td_oracle(agent, critic, s, gamma);
            0.5 * (w / max_w) * d * d
        })
        .sum::<f64>()
        / m
}

/// `-(mean Q(s, mu(s‖g), g) - l2 mean |mu|^2)` as a function of the actor.
pub fn actor_loss_oracle(agent: &AgentNetworks, actor: &Mlp, samples: &[Sample], l2: f64) -> f64 {
    let m = samples.len() as f64;
    samples
        .iter()
        .map(|s| {
            let a = naive_forward(actor, &concat(&[&s.state, &s.goal]));
            let q = naive_forward(&agent.critic, &concat(&[&s.state, &s.goal, &a]))[0];
            let sq: f64 = a.iter().map(|x| x * x).sum();
            -(q - l2 * sq)
        })
        .sum::<f64>()
        / m
}

/// Agent whose main and target networks all differ.
pub fn perturbed_agent(spec: EnvSpec, hidden: &[usize], seed: u64) -> AgentNetworks {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agent = AgentNetworks::new(spec, hidden, &mut rng).unwrap();
    for v in agent.target_actor.values_mut().chain(agent.target_critic.values_mut()) {
        *v += rng.random_range(-0.1..0.1);
    }
    agent
}

/// States `[tag, t]`, goal `[9, 9]`, achieved goal `[tag, t]`.
pub fn synthetic_episode(h: usize, tag: f64) -> Episode {
    let transitions = (0..h)
        .map(|t| Transition {
            state: vec![tag, t as f64],
            action: vec![0.5, -0.5],
            next_state: vec![tag, t as f64 + 1.0],
            episode_goal: vec![9.0, 9.0],
        })
        .collect();
    let achieved_goals = (0..=h).map(|t| vec![tag, t as f64]).collect();
    Episode {
        transitions,
        achieved_goals,
    }
}
