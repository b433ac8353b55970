//! Goal-conditioned DDPG.
//!
//! The actor maps `state ‖ goal` to an action through a tanh head; the critic
//! maps `state ‖ goal ‖ action` to a scalar. Target copies of both are used only
//! for the bootstrap term of the TD error and move by Polyak averaging.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::envs::EnvSpec;
use crate::error::{check_len, Error, Result};
use crate::nn::{polyak_update, AdamHyper, AdamState, BackwardMode, ForwardCache, Mlp, OutputActivation};
use crate::replay::Transition;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Exploration {
    pub gaussian_sigma: f64,
    pub epsilon_greedy: f64,
}

impl Default for Exploration {
    fn default() -> Self {
        Self {
            gaussian_sigma: 0.2,
            epsilon_greedy: 0.3,
        }
    }
}

impl Exploration {
    pub const NONE: Self = Self {
        gaussian_sigma: 0.0,
        epsilon_greedy: 0.0,
    };
}

/// Actor, critic, their targets and optimizer states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentNetworks {
    pub state_dim: usize,
    pub goal_dim: usize,
    pub action_dim: usize,
    pub actor: Mlp,
    pub critic: Mlp,
    pub target_actor: Mlp,
    pub target_critic: Mlp,
    pub actor_opt: AdamState,
    pub critic_opt: AdamState,
}

/// One critic training example with its reward already recomputed.
#[derive(Debug, Clone, Copy)]
pub struct CriticSample<'a> {
    pub state: &'a [f64],
    pub action: &'a [f64],
    pub next_state: &'a [f64],
    pub goal: &'a [f64],
    pub reward: f64,
}

/// TD errors for a batch and the critic activations needed to take a step on them.
#[derive(Debug)]
pub struct TdBatch {
    pub deltas: Vec<f64>,
    critic_cache: ForwardCache,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor_objective: f64,
    pub mean_abs_td: f64,
}

impl AgentNetworks {
    pub fn new<R: Rng + ?Sized>(spec: EnvSpec, hidden: &[usize], rng: &mut R) -> Result<Self> {
        Self::with_adam(spec, hidden, AdamHyper::default(), rng)
    }

    pub fn with_adam<R: Rng + ?Sized>(
        spec: EnvSpec,
        hidden: &[usize],
        adam: AdamHyper,
        rng: &mut R,
    ) -> Result<Self> {
        let sizes = |input: usize, output: usize| {
            let mut s = vec![input];
            s.extend_from_slice(hidden);
            s.push(output);
            s
        };
        let sg = spec.state_dim + spec.goal_dim;
        let actor = Mlp::new(&sizes(sg, spec.action_dim), OutputActivation::Tanh, rng)?;
        let critic = Mlp::new(&sizes(sg + spec.action_dim, 1), OutputActivation::Identity, rng)?;
        Self::from_parts(spec, actor, critic, adam)
    }

    /// Wraps given actor/critic weights; targets start as exact copies.
    pub fn from_parts(spec: EnvSpec, actor: Mlp, critic: Mlp, adam: AdamHyper) -> Result<Self> {
        let sg = spec.state_dim + spec.goal_dim;
        check_len("actor input", sg, actor.input_dim())?;
        check_len("actor output", spec.action_dim, actor.output_dim())?;
        check_len("critic input", sg + spec.action_dim, critic.input_dim())?;
        check_len("critic output", 1, critic.output_dim())?;
        if actor.output_activation() != OutputActivation::Tanh {
            return Err(Error::InvalidArgument("actor needs a tanh head".into()));
        }
        Ok(Self {
            state_dim: spec.state_dim,
            goal_dim: spec.goal_dim,
            action_dim: spec.action_dim,
            actor_opt: AdamState::new(&actor, adam),
            critic_opt: AdamState::new(&critic, adam),
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            actor,
            critic,
        })
    }

    /// Checks dimensions, shape congruence of targets and finiteness.
    pub fn validate(&self) -> Result<()> {
        let sg = self.state_dim + self.goal_dim;
        check_len("actor input", sg, self.actor.input_dim())?;
        check_len("actor output", self.action_dim, self.actor.output_dim())?;
        check_len("critic input", sg + self.action_dim, self.critic.input_dim())?;
        check_len("critic output", 1, self.critic.output_dim())?;
        if !self.actor.same_shape(&self.target_actor) || !self.critic.same_shape(&self.target_critic)
        {
            return Err(Error::InvalidArgument("targets differ in shape from mains".into()));
        }
        for net in [&self.actor, &self.critic, &self.target_actor, &self.target_critic] {
            Mlp::from_layers(net.layers().to_vec(), net.output_activation())?;
        }
        Ok(())
    }

    fn actor_input(&self, state: &[f64], goal: &[f64]) -> Result<Vec<f64>> {
        check_len("state", self.state_dim, state.len())?;
        check_len("goal", self.goal_dim, goal.len())?;
        let mut x = Vec::with_capacity(self.state_dim + self.goal_dim);
        x.extend_from_slice(state);
        x.extend_from_slice(goal);
        Ok(x)
    }

    /// Deterministic policy `mu(s ‖ g)`.
    pub fn act(&self, state: &[f64], goal: &[f64]) -> Result<Vec<f64>> {
        let x = self.actor_input(state, goal)?;
        Ok(self.actor.forward(&x)?.0)
    }

    pub fn q_value(&self, state: &[f64], goal: &[f64], action: &[f64]) -> Result<f64> {
        let mut x = self.actor_input(state, goal)?;
        check_len("action", self.action_dim, action.len())?;
        x.extend_from_slice(action);
        Ok(self.critic.forward(&x)?.0[0])
    }

    /// With probability `epsilon_greedy` a uniform random action, otherwise the
    /// actor output plus Gaussian noise, clipped to `[-1, 1]`.
    pub fn behavior_action<R: Rng + ?Sized>(
        &self,
        state: &[f64],
        goal: &[f64],
        exploration: &Exploration,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let mut action = self.act(state, goal)?;
        if exploration.epsilon_greedy > 0.0 && rng.random::<f64>() < exploration.epsilon_greedy {
            return Ok((0..self.action_dim)
                .map(|_| rng.random_range(-1.0..=1.0))
                .collect());
        }
        if exploration.gaussian_sigma > 0.0 {
            let noise = Normal::new(0.0, exploration.gaussian_sigma)
                .map_err(|e| Error::InvalidArgument(e.to_string()))?;
            for a in &mut action {
                *a += noise.sample(rng);
            }
        }
        action.iter_mut().for_each(|a| *a = a.clamp(-1.0, 1.0));
        Ok(action)
    }

    /// `r + gamma * Q'(s', mu'(s' ‖ g), g) - Q(s, a, g)` for a single transition.
    pub fn td_error<F>(&self, transition: &Transition, goal: &[f64], reward_fn: F, gamma: f64) -> Result<f64>
    where
        F: Fn(&Transition, &[f64]) -> f64,
    {
        let reward = reward_fn(transition, goal);
        let sample = CriticSample {
            state: &transition.state,
            action: &transition.action,
            next_state: &transition.next_state,
            goal,
            reward,
        };
        Ok(self.td_errors(&[sample], gamma)?.deltas[0])
    }

    /// TD errors for a batch, evaluated with the current parameters.
    pub fn td_errors(&self, batch: &[CriticSample<'_>], gamma: f64) -> Result<TdBatch> {
        self.td_errors_clipped(batch, gamma, None)
    }

    /// Like [`AgentNetworks::td_errors`], with the bootstrap target
    /// `r + gamma Q'` clamped to `target_range` when given.
    pub fn td_errors_clipped(
        &self,
        batch: &[CriticSample<'_>],
        gamma: f64,
        target_range: Option<(f64, f64)>,
    ) -> Result<TdBatch> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidArgument(format!("gamma {gamma} outside [0, 1)")));
        }
        let m = batch.len();
        let (sd, gd, ad) = (self.state_dim, self.goal_dim, self.action_dim);
        let mut next_in = Vec::with_capacity(m * (sd + gd));
        let mut critic_in = Vec::with_capacity(m * (sd + gd + ad));
        for s in batch {
            check_len("state", sd, s.state.len())?;
            check_len("next state", sd, s.next_state.len())?;
            check_len("goal", gd, s.goal.len())?;
            check_len("action", ad, s.action.len())?;
            next_in.extend_from_slice(s.next_state);
            next_in.extend_from_slice(s.goal);
            critic_in.extend_from_slice(s.state);
            critic_in.extend_from_slice(s.goal);
            critic_in.extend_from_slice(s.action);
        }
        let next_actions = self.target_actor.predict_batch(&next_in, m)?;
        let mut target_in = Vec::with_capacity(m * (sd + gd + ad));
        for (row, a) in next_in.chunks_exact(sd + gd).zip(next_actions.chunks_exact(ad)) {
            target_in.extend_from_slice(row);
            target_in.extend_from_slice(a);
        }
        let next_q = self.target_critic.predict_batch(&target_in, m)?;
        let critic_cache = self.critic.forward_batch(&critic_in, m)?;
        let deltas: Vec<f64> = batch
            .iter()
            .zip(&next_q)
            .zip(critic_cache.output())
            .map(|((s, nq), q)| {
                let y = s.reward + gamma * nq;
                let y = target_range.map_or(y, |(lo, hi)| y.clamp(lo, hi));
                y - q
            })
            .collect();
        if deltas.iter().any(|d| !d.is_finite()) {
            return Err(Error::NonFinite("TD error"));
        }
        Ok(TdBatch {
            deltas,
            critic_cache,
        })
    }

    /// Gradient of the weighted squared TD loss
    /// `1/(2M) sum w_k delta_k^2` with weights divided by their batch maximum.
    pub fn critic_gradients(&self, td: &TdBatch, weights: &[f64]) -> Result<(crate::nn::Gradients, f64)> {
        let m = td.deltas.len();
        check_len("weights", m, weights.len())?;
        if weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidArgument("importance weights must be positive".into()));
        }
        let max_w = weights.iter().cloned().fold(0.0, f64::max);
        let mut loss = 0.0;
        let out_grad: Vec<f64> = td
            .deltas
            .iter()
            .zip(weights)
            .map(|(d, w)| {
                let w = w / max_w;
                loss += 0.5 * w * d * d;
                -w * d / m as f64
            })
            .collect();
        let (grads, _) = self
            .critic
            .backward_batch(&td.critic_cache, &out_grad, BackwardMode::PARAMS)?;
        Ok((grads.expect("params requested"), loss / m as f64))
    }

    /// One Adam step on the critic; targets and actor are untouched.
    /// Returns the per-item TD errors the step was taken on.
    pub fn critic_update(
        &mut self,
        batch: &[CriticSample<'_>],
        weights: &[f64],
        gamma: f64,
        learning_rate: f64,
    ) -> Result<Vec<f64>> {
        let td = self.td_errors(batch, gamma)?;
        let (grads, _) = self.critic_gradients(&td, weights)?;
        self.critic_opt.step(&mut self.critic, &grads, learning_rate)?;
        Ok(td.deltas)
    }

    /// Gradient of `-(mean Q(s, mu(s‖g), g) - l2 * mean |mu(s‖g)|^2)` with respect
    /// to the actor parameters. The critic only supplies `dQ/da`.
    pub fn actor_gradients(
        &self,
        states_goals: &[(&[f64], &[f64])],
        action_l2: f64,
    ) -> Result<(crate::nn::Gradients, f64)> {
        let m = states_goals.len();
        if m == 0 {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let (sd, gd, ad) = (self.state_dim, self.goal_dim, self.action_dim);
        let mut actor_in = Vec::with_capacity(m * (sd + gd));
        for (s, g) in states_goals {
            check_len("state", sd, s.len())?;
            check_len("goal", gd, g.len())?;
            actor_in.extend_from_slice(s);
            actor_in.extend_from_slice(g);
        }
        let actor_cache = self.actor.forward_batch(&actor_in, m)?;
        let actions = actor_cache.output();
        let mut critic_in = Vec::with_capacity(m * (sd + gd + ad));
        for (row, a) in actor_in.chunks_exact(sd + gd).zip(actions.chunks_exact(ad)) {
            critic_in.extend_from_slice(row);
            critic_in.extend_from_slice(a);
        }
        let critic_cache = self.critic.forward_batch(&critic_in, m)?;
        let q_mean = critic_cache.output().iter().sum::<f64>() / m as f64;
        let l2_mean = actions.iter().map(|a| a * a).sum::<f64>() / m as f64;
        let (_, dq_dinput) =
            self.critic
                .backward_batch(&critic_cache, &vec![1.0 / m as f64; m], BackwardMode::INPUT)?;
        let dq_dinput = dq_dinput.expect("input requested");
        let in_dim = sd + gd + ad;
        let mut d_actions = Vec::with_capacity(m * ad);
        for (row, a) in dq_dinput.chunks_exact(in_dim).zip(actions.chunks_exact(ad)) {
            for (dq, av) in row[sd + gd..].iter().zip(a) {
                d_actions.push(-dq + 2.0 * action_l2 * av / m as f64);
            }
        }
        let (grads, _) = self
            .actor
            .backward_batch(&actor_cache, &d_actions, BackwardMode::PARAMS)?;
        Ok((grads.expect("params requested"), q_mean - action_l2 * l2_mean))
    }

    /// One Adam step ascending the actor objective; the critic is untouched.
    /// Returns the objective before the step.
    pub fn actor_update(
        &mut self,
        states_goals: &[(&[f64], &[f64])],
        action_l2: f64,
        learning_rate: f64,
    ) -> Result<f64> {
        let (grads, objective) = self.actor_gradients(states_goals, action_l2)?;
        self.actor_opt.step(&mut self.actor, &grads, learning_rate)?;
        Ok(objective)
    }

    pub fn sync_targets(&mut self, averaging_coefficient: f64) -> Result<()> {
        polyak_update(&mut self.target_actor, &self.actor, averaging_coefficient)?;
        polyak_update(&mut self.target_critic, &self.critic, averaging_coefficient)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec() -> EnvSpec {
        EnvSpec {
            state_dim: 2,
            action_dim: 2,
            goal_dim: 2,
            horizon: 10,
        }
    }

    fn agent(seed: u64) -> AgentNetworks {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        AgentNetworks::new(spec(), &[16, 16], &mut rng).unwrap()
    }

    fn transition() -> Transition {
        Transition {
            state: vec![0.1, -0.2],
            action: vec![0.5, 0.3],
            next_state: vec![0.15, -0.17],
            episode_goal: vec![0.7, 0.7],
        }
    }

    #[test]
    fn targets_start_as_copies() {
        let a = agent(1);
        assert_eq!(a.actor, a.target_actor);
        assert_eq!(a.critic, a.target_critic);
        a.validate().unwrap();
    }

    #[test]
    fn noise_free_behavior_is_the_actor() {
        let a = agent(2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = [0.3, 0.4];
        let g = [-0.5, 0.5];
        let act = a.behavior_action(&s, &g, &Exploration::NONE, &mut rng).unwrap();
        assert_eq!(act, a.act(&s, &g).unwrap());
    }

    #[test]
    fn behavior_actions_are_bounded() {
        let a = agent(3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let wild = Exploration {
            gaussian_sigma: 5.0,
            epsilon_greedy: 0.3,
        };
        for _ in 0..2000 {
            let act = a.behavior_action(&[0.0, 0.0], &[1.0, 1.0], &wild, &mut rng).unwrap();
            assert!(act.iter().all(|x| (-1.0..=1.0).contains(x)));
        }
    }

    #[test]
    fn gamma_zero_td_is_reward_minus_q() {
        let a = agent(4);
        let t = transition();
        let g = [0.2, 0.2];
        let d = a.td_error(&t, &g, |_, _| -1.0, 0.0).unwrap();
        let q = a.q_value(&t.state, &g, &t.action).unwrap();
        assert!((d - (-1.0 - q)).abs() < 1e-15);
    }

    #[test]
    fn zero_networks_give_reward_as_td() {
        let actor = Mlp::zeros(&[4, 8, 2], OutputActivation::Tanh).unwrap();
        let critic = Mlp::zeros(&[6, 8, 1], OutputActivation::Identity).unwrap();
        let a = AgentNetworks::from_parts(spec(), actor, critic, AdamHyper::default()).unwrap();
        let d = a.td_error(&transition(), &[0.0, 0.0], |_, _| -1.0, 0.98).unwrap();
        assert_eq!(d, -1.0);
    }

    #[test]
    fn updates_touch_only_their_network() {
        let mut a = agent(5);
        let t = transition();
        let g = [0.2, 0.2];
        let sample = CriticSample {
            state: &t.state,
            action: &t.action,
            next_state: &t.next_state,
            goal: &g,
            reward: -1.0,
        };
        let before = a.clone();
        a.critic_update(&[sample], &[0.3], 0.98, 1e-3).unwrap();
        assert_eq!(a.actor, before.actor);
        assert_eq!(a.target_actor, before.target_actor);
        assert_eq!(a.target_critic, before.target_critic);
        assert_ne!(a.critic, before.critic);

        let before = a.clone();
        a.actor_update(&[(&t.state[..], &g[..])], 1.0, 1e-3).unwrap();
        assert_eq!(a.critic, before.critic);
        assert_eq!(a.target_critic, before.target_critic);
        assert_ne!(a.actor, before.actor);
    }

    #[test]
    fn single_item_weight_normalizes_to_one() {
        let a = agent(6);
        let t = transition();
        let g = [0.2, 0.2];
        let sample = CriticSample {
            state: &t.state,
            action: &t.action,
            next_state: &t.next_state,
            goal: &g,
            reward: -1.0,
        };
        let td = a.td_errors(&[sample], 0.98).unwrap();
        let (g1, _) = a.critic_gradients(&td, &[0.01]).unwrap();
        let (g2, _) = a.critic_gradients(&td, &[1.0]).unwrap();
        assert_eq!(g1, g2);
    }

    #[test]
    fn zero_td_gives_zero_critic_gradient() {
        let a = agent(7);
        let t = transition();
        let g = [0.2, 0.2];
        let q = a.q_value(&t.state, &g, &t.action).unwrap();
        let nq = {
            let next_a = a.target_actor.forward(&[t.next_state.clone(), g.to_vec()].concat()).unwrap().0;
            a.target_critic
                .forward(&[t.next_state.clone(), g.to_vec(), next_a].concat())
                .unwrap()
                .0[0]
        };
        let sample = CriticSample {
            state: &t.state,
            action: &t.action,
            next_state: &t.next_state,
            goal: &g,
            reward: q - 0.98 * nq,
        };
        let td = a.td_errors(&[sample], 0.98).unwrap();
        assert!(td.deltas[0].abs() < 1e-15);
        let (grads, _) = a.critic_gradients(&td, &[1.0]).unwrap();
        assert!(grads.values().all(|v| v.abs() < 1e-13));
    }

    #[test]
    fn flat_critic_pushes_actions_toward_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let actor = Mlp::new(&[4, 16, 2], OutputActivation::Tanh, &mut rng).unwrap();
        let mut critic = Mlp::zeros(&[6, 16, 1], OutputActivation::Identity).unwrap();
        critic.layers_mut()[1].biases[0] = 3.0;
        let mut a = AgentNetworks::from_parts(spec(), actor, critic, AdamHyper::default()).unwrap();
        let inputs: Vec<(Vec<f64>, Vec<f64>)> = (0..32)
            .map(|_| {
                (
                    vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                    vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                )
            })
            .collect();
        let batch: Vec<(&[f64], &[f64])> = inputs.iter().map(|(s, g)| (&s[..], &g[..])).collect();
        let norm = |a: &AgentNetworks| -> f64 {
            batch
                .iter()
                .map(|(s, g)| a.act(s, g).unwrap().iter().map(|x| x * x).sum::<f64>())
                .sum()
        };
        let start = norm(&a);
        for _ in 0..200 {
            a.actor_update(&batch, 1.0, 1e-3).unwrap();
        }
        assert!(norm(&a) < 0.1 * start, "{} vs {start}", norm(&a));
    }

    #[test]
    fn sync_targets_moves_toward_mains() {
        let mut a = agent(9);
        a.actor.values_mut().for_each(|v| *v += 1.0);
        let before = a.target_actor.clone();
        a.sync_targets(0.95).unwrap();
        for ((t, b), m) in a.target_actor.values().zip(before.values()).zip(a.actor.values()) {
            assert!((t - (0.95 * b + 0.05 * m)).abs() < 1e-15);
        }
    }
}
