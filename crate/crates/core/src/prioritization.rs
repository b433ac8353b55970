//! Replay sampling strategies.
//!
//! `Hgr` draws an episode from the episode sum-tree, then a (transition,
//! future state) pair from that episode's pair table. `Uniform` is vanilla HER
//! with the `future` strategy. `Per` is the one-step baseline: a transition is
//! drawn proportionally to its own priority and the future state uniformly.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::replay::{pair_count, pair_from_index, pair_index, EpisodeRecord, ReplayBuffer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Hgr,
    Uniform,
    Per,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Hgr => "hgr",
            Strategy::Uniform => "uniform",
            Strategy::Per => "per",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "hgr" => Ok(Strategy::Hgr),
            "uniform" => Ok(Strategy::Uniform),
            "per" => Ok(Strategy::Per),
            other => Err(Error::Config(format!(
                "unknown strategy {other:?}; expected hgr, uniform or per"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrioritizationConfig {
    pub strategy: Strategy,
    /// Episode-level exponent.
    pub alpha: f64,
    /// Pair-level exponent.
    pub alpha_prime: f64,
    pub beta0: f64,
    pub beta0_prime: f64,
    pub anneal_steps: u64,
    /// When false, replayed transitions keep their original episode goal.
    pub hindsight: bool,
    /// Chance that a hindsight draw keeps its sampled goal; otherwise the
    /// transition is replayed with its original episode goal.
    pub relabel_probability: f64,
}

impl Default for PrioritizationConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Hgr,
            alpha: 0.6,
            alpha_prime: 0.6,
            beta0: 0.4,
            beta0_prime: 0.4,
            anneal_steps: 60_000,
            hindsight: true,
            relabel_probability: 0.8,
        }
    }
}

impl PrioritizationConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("alpha_prime", self.alpha_prime),
            ("beta", self.beta0),
            ("beta_prime", self.beta0_prime),
            ("relabel_probability", self.relabel_probability),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if self.anneal_steps == 0 {
            return Err(Error::Config("anneal_steps must be positive".into()));
        }
        if !self.hindsight && self.strategy != Strategy::Uniform {
            return Err(Error::Config(
                "hindsight=false is only defined for strategy=uniform".into(),
            ));
        }
        Ok(())
    }
}

/// One replayed (episode, transition, hindsight goal) draw.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledItem {
    pub episode_id: usize,
    pub pair: (usize, usize),
    /// Probability of the first-stage draw (episode, or transition for `Per`).
    pub p_episode: f64,
    /// Probability of the second-stage draw.
    pub p_pair: f64,
    /// Importance weight before batch max-normalization.
    pub weight: f64,
    pub goal: Vec<f64>,
    /// Whether `goal` is the achieved goal of state `pair.1`. Only relabeled
    /// draws carry a TD error that belongs to their pair.
    pub relabeled: bool,
}

#[derive(Debug, Clone)]
pub struct SampledBatch {
    pub items: Vec<SampledItem>,
    pub beta: f64,
    pub beta_prime: f64,
    pub max_weight: f64,
}

impl SampledBatch {
    /// Weights divided by the batch maximum; the largest is exactly 1.
    pub fn normalized_weights(&self) -> Vec<f64> {
        self.items.iter().map(|it| it.weight / self.max_weight).collect()
    }
}

fn uniform_index(u: f64, n: usize) -> usize {
    ((u * n as f64) as usize).min(n - 1)
}

/// Draws an episode slot from the episode sum-tree. Returns `(id, P(n))`.
pub fn sample_episode<R: Rng + ?Sized>(buffer: &ReplayBuffer, rng: &mut R) -> Result<(usize, f64)> {
    if buffer.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    let tree = buffer.episode_tree();
    let total = tree.total();
    let u: f64 = rng.random();
    let target = u * total;
    let id = if target < total {
        tree.sample_prefix(target)?
    } else {
        tree.sample_prefix(prev_float(total))?
    };
    Ok((id, tree.leaf(id) / total))
}

fn prev_float(x: f64) -> f64 {
    f64::from_bits(x.to_bits() - 1)
}

/// Draws a pair `(j, i)` with probability `p_ji^alpha' / sum p^alpha'`.
pub fn sample_pair<R: Rng + ?Sized>(
    record: &mut EpisodeRecord,
    alpha_prime: f64,
    rng: &mut R,
) -> Result<((usize, usize), f64)> {
    let h = record.episode.horizon();
    let u: f64 = rng.random();
    let (k, p) = record.pairs.sample(alpha_prime, u)?;
    Ok((pair_from_index(k, h)?, p))
}

/// `(1 / (N_e P(n)))^beta * (1 / (K P'(j,i)))^beta'`.
pub fn importance_weight(
    p_episode: f64,
    p_pair: f64,
    episodes: usize,
    pairs: usize,
    beta: f64,
    beta_prime: f64,
) -> Result<f64> {
    for p in [p_episode, p_pair] {
        if !(p > 0.0 && p <= 1.0 + 1e-12) {
            return Err(Error::InvalidArgument(format!(
                "sampling probability {p} outside (0, 1]"
            )));
        }
    }
    if episodes == 0 || pairs == 0 {
        return Err(Error::InvalidArgument("population sizes must be positive".into()));
    }
    let w_episode = (1.0 / (episodes as f64 * p_episode)).powf(beta);
    let w_pair = (1.0 / (pairs as f64 * p_pair)).powf(beta_prime);
    Ok(w_episode * w_pair)
}

/// Linear schedule from `beta0` at step 0 to 1 at `anneal_steps`, flat afterwards.
pub fn anneal_beta(step: u64, anneal_steps: u64, beta0: f64) -> f64 {
    if anneal_steps == 0 {
        return 1.0;
    }
    (beta0 + (1.0 - beta0) * step as f64 / anneal_steps as f64).min(1.0)
}

/// Draws `batch_size` independent items according to `config.strategy`, with
/// importance weights under the annealed exponents at `step`.
pub fn sample_batch<R: Rng + ?Sized>(
    buffer: &mut ReplayBuffer,
    config: &PrioritizationConfig,
    batch_size: usize,
    step: u64,
    rng: &mut R,
) -> Result<SampledBatch> {
    if buffer.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let beta = anneal_beta(step, config.anneal_steps, config.beta0);
    let beta_prime = anneal_beta(step, config.anneal_steps, config.beta0_prime);
    let h = buffer.horizon();
    let k = pair_count(h);
    let n_e = buffer.len();

    let mut items = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let item = match (config.strategy, config.hindsight) {
            (Strategy::Hgr, _) => {
                let (episode_id, p_episode) = sample_episode(buffer, rng)?;
                let record = buffer.record_mut(episode_id)?;
                let (pair, p_pair) = sample_pair(record, config.alpha_prime, rng)?;
                let weight = importance_weight(p_episode, p_pair, n_e, k, beta, beta_prime)?;
                let goal = record.episode.achieved_goals[pair.1].clone();
                SampledItem {
                    episode_id,
                    pair,
                    p_episode,
                    p_pair,
                    weight,
                    goal,
                    relabeled: true,
                }
            }
            (Strategy::Uniform, true) => {
                let episode_id = uniform_index(rng.random(), n_e);
                let flat = uniform_index(rng.random(), k);
                let pair = pair_from_index(flat, h)?;
                let (p_episode, p_pair) = (1.0 / n_e as f64, 1.0 / k as f64);
                let weight = importance_weight(p_episode, p_pair, n_e, k, beta, beta_prime)?;
                let goal = buffer.record(episode_id)?.episode.achieved_goals[pair.1].clone();
                SampledItem {
                    episode_id,
                    pair,
                    p_episode,
                    p_pair,
                    weight,
                    goal,
                    relabeled: true,
                }
            }
            (Strategy::Uniform, false) => {
                let episode_id = uniform_index(rng.random(), n_e);
                let j = uniform_index(rng.random(), h);
                let goal = buffer.record(episode_id)?.episode.transitions[j]
                    .episode_goal
                    .clone();
                SampledItem {
                    episode_id,
                    pair: (j, j + 1),
                    p_episode: 1.0 / n_e as f64,
                    p_pair: 1.0 / h as f64,
                    weight: 1.0,
                    goal,
                    relabeled: false,
                }
            }
            (Strategy::Per, _) => {
                let tree = buffer.transition_tree();
                let total = tree.total();
                let target = (rng.random::<f64>() * total).min(prev_float(total));
                let leaf = tree.sample_prefix(target)?;
                let p_transition = tree.leaf(leaf) / total;
                let (episode_id, j) = (leaf / h, leaf % h);
                let i = j + 1 + uniform_index(rng.random(), h - j);
                let weight = importance_weight(p_transition, 1.0, n_e * h, 1, beta, 0.0)?;
                let goal = buffer.record(episode_id)?.episode.achieved_goals[i].clone();
                SampledItem {
                    episode_id,
                    pair: (j, i),
                    p_episode: p_transition,
                    p_pair: 1.0 / (h - j) as f64,
                    weight,
                    goal,
                    relabeled: true,
                }
            }
        };
        let mut item = item;
        if item.relabeled && config.relabel_probability < 1.0 && rng.random::<f64>() >= config.relabel_probability {
            item.goal = buffer.record(item.episode_id)?.episode.transitions[item.pair.0]
                .episode_goal
                .clone();
            item.relabeled = false;
        }
        debug_assert!(pair_index(item.pair.0, item.pair.1, h).is_ok());
        items.push(item);
    }
    let max_weight = items.iter().map(|it| it.weight).fold(0.0, f64::max);
    Ok(SampledBatch {
        items,
        beta,
        beta_prime,
        max_weight,
    })
}
