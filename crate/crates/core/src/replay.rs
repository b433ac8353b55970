//! Episode-structured replay storage.
//!
//! Episodes are stored whole. Each episode of horizon `H` carries a table of raw
//! priorities for every (transition `j`, future state `i`) pair with
//! `0 <= j < H` and `j < i <= H`, i.e. `K = H(H+1)/2` entries. The buffer keeps
//! one sum-tree leaf per episode slot holding `(mean pair priority + eps)^alpha`,
//! and a second, transition-level tree used by the one-step PER baseline.
//!
//! Rewards are never stored; they are recomputed from achieved goals at replay.

use serde::{Deserialize, Serialize};

use crate::envs::GoalValue;
use crate::error::{check_len, Error, Result};
use crate::sumtree::{SumTree, SumTreeLeaves};

/// Exact recompute cadence for the incrementally maintained pair sums.
const RECOMPUTE_EVERY: u64 = 10_000;

pub const DEFAULT_PRIORITY_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub next_state: Vec<f64>,
    pub episode_goal: GoalValue,
}

/// A rolled-out episode: `H` transitions and the achieved goals of `s_0..s_H`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub transitions: Vec<Transition>,
    pub achieved_goals: Vec<GoalValue>,
}

impl Episode {
    pub fn horizon(&self) -> usize {
        self.transitions.len()
    }

    pub fn validate(&self, horizon: usize) -> Result<()> {
        check_len("episode transitions", horizon, self.transitions.len())?;
        check_len("episode achieved goals", horizon + 1, self.achieved_goals.len())
    }
}

/// Number of (transition, future state) pairs in an episode of horizon `h`.
pub fn pair_count(h: usize) -> usize {
    h * (h + 1) / 2
}

/// Flat index of pair `(j, i)`, ordered by `j` then `i`.
pub fn pair_index(j: usize, i: usize, h: usize) -> Result<usize> {
    if j >= h || i <= j || i > h {
        return Err(Error::InvalidArgument(format!(
            "pair ({j}, {i}) invalid for horizon {h}"
        )));
    }
    Ok(j * h - j * j.saturating_sub(1) / 2 + (i - j - 1))
}

/// Inverse of [`pair_index`].
pub fn pair_from_index(k: usize, h: usize) -> Result<(usize, usize)> {
    if k >= pair_count(h) {
        return Err(Error::InvalidArgument(format!(
            "pair index {k} out of range for horizon {h}"
        )));
    }
    let mut rest = k;
    let mut j = 0;
    while rest >= h - j {
        rest -= h - j;
        j += 1;
    }
    Ok((j, j + 1 + rest))
}

/// Raw pair priorities plus a lazily rebuilt cache of their `alpha'` powers.
#[derive(Debug, Clone)]
pub struct PairPriorityTable {
    raw: Vec<f64>,
    cached_sum: f64,
    powered: Vec<f64>,
    powered_sum: f64,
    powered_exponent: Option<f64>,
    updates: u64,
}

impl PairPriorityTable {
    pub fn filled(horizon: usize, value: f64) -> Self {
        let k = pair_count(horizon);
        Self {
            raw: vec![value; k],
            cached_sum: value * k as f64,
            powered: Vec::new(),
            powered_sum: 0.0,
            powered_exponent: None,
            updates: 0,
        }
    }

    fn from_raw(raw: Vec<f64>) -> Result<Self> {
        if raw.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(Error::Format("pair priorities must be positive".into()));
        }
        let mut table = Self {
            cached_sum: 0.0,
            raw,
            powered: Vec::new(),
            powered_sum: 0.0,
            powered_exponent: None,
            updates: 0,
        };
        table.recompute();
        Ok(table)
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    pub fn get(&self, k: usize) -> f64 {
        self.raw[k]
    }

    pub fn cached_sum(&self) -> f64 {
        self.cached_sum
    }

    pub fn mean(&self) -> f64 {
        self.cached_sum / self.raw.len() as f64
    }

    pub fn exact_sum(&self) -> f64 {
        self.raw.iter().sum()
    }

    pub fn set(&mut self, k: usize, value: f64) {
        let old = std::mem::replace(&mut self.raw[k], value);
        self.cached_sum += value - old;
        if let Some(e) = self.powered_exponent {
            let p = value.powf(e);
            let old_p = std::mem::replace(&mut self.powered[k], p);
            self.powered_sum += p - old_p;
        }
        self.updates += 1;
        if self.updates.is_multiple_of(RECOMPUTE_EVERY) {
            self.recompute();
        }
    }

    fn recompute(&mut self) {
        self.cached_sum = self.raw.iter().sum();
        if self.powered_exponent.is_some() {
            self.powered_sum = self.powered.iter().sum();
        }
    }

    fn ensure_powered(&mut self, exponent: f64) {
        if self.powered_exponent != Some(exponent) {
            self.powered = self.raw.iter().map(|p| p.powf(exponent)).collect();
            self.powered_sum = self.powered.iter().sum();
            self.powered_exponent = Some(exponent);
        }
    }

    /// Draws a flat pair index with probability `p_k^alpha' / sum p^alpha'` by a
    /// linear prefix scan. `u` is uniform in `[0, 1)`.
    pub fn sample(&mut self, alpha_prime: f64, u: f64) -> Result<(usize, f64)> {
        if self.raw.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
            return Err(Error::InvalidArgument(
                "pair priority table holds a nonpositive entry".into(),
            ));
        }
        self.ensure_powered(alpha_prime);
        let target = u * self.powered_sum;
        let mut acc = 0.0;
        let mut chosen = self.powered.len() - 1;
        for (k, &p) in self.powered.iter().enumerate() {
            acc += p;
            if target < acc {
                chosen = k;
                break;
            }
        }
        Ok((chosen, self.powered[chosen] / self.powered_sum))
    }
}

#[derive(Debug, Clone)]
pub struct EpisodeRecord {
    pub episode: Episode,
    pub pairs: PairPriorityTable,
}

/// Ring buffer of whole episodes with episode- and transition-level sum-trees.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    horizon: usize,
    capacity: usize,
    alpha: f64,
    priority_eps: f64,
    max_priority: f64,
    episodes: Vec<EpisodeRecord>,
    cursor: usize,
    episode_tree: SumTree,
    transition_tree: SumTree,
}

impl ReplayBuffer {
    /// `buffer_size` counts transitions; the buffer holds `buffer_size / horizon` episodes.
    pub fn new(buffer_size: usize, horizon: usize, alpha: f64, priority_eps: f64) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be positive".into()));
        }
        let capacity = buffer_size / horizon;
        if capacity == 0 {
            return Err(Error::InvalidArgument(format!(
                "buffer size {buffer_size} holds no complete episode of length {horizon}"
            )));
        }
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidArgument(format!("alpha {alpha} outside [0, 1]")));
        }
        if !(priority_eps > 0.0 && priority_eps.is_finite()) {
            return Err(Error::InvalidArgument("priority eps must be positive".into()));
        }
        Ok(Self {
            horizon,
            capacity,
            alpha,
            priority_eps,
            max_priority: 1.0,
            episodes: Vec::with_capacity(capacity.min(1 << 16)),
            cursor: 0,
            episode_tree: SumTree::new(capacity),
            transition_tree: SumTree::new(capacity * horizon),
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn priority_eps(&self) -> f64 {
        self.priority_eps
    }

    pub fn pair_count(&self) -> usize {
        pair_count(self.horizon)
    }

    /// Live episode count `N_e`.
    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn max_priority(&self) -> f64 {
        self.max_priority
    }

    pub fn episode_tree(&self) -> &SumTree {
        &self.episode_tree
    }

    pub fn transition_tree(&self) -> &SumTree {
        &self.transition_tree
    }

    pub fn record(&self, episode_id: usize) -> Result<&EpisodeRecord> {
        self.episodes.get(episode_id).ok_or_else(|| {
            Error::InvalidArgument(format!("episode {episode_id} is not in the buffer"))
        })
    }

    pub(crate) fn record_mut(&mut self, episode_id: usize) -> Result<&mut EpisodeRecord> {
        self.episodes.get_mut(episode_id).ok_or_else(|| {
            Error::InvalidArgument(format!("episode {episode_id} is not in the buffer"))
        })
    }

    fn episode_leaf(&self, mean_priority: f64) -> f64 {
        (mean_priority + self.priority_eps).powf(self.alpha)
    }

    /// Stores with the running maximum priority.
    pub fn store(&mut self, episode: Episode) -> Result<usize> {
        self.store_episode(episode, self.max_priority)
    }

    /// Stores an episode with every pair priority set to `max_priority`,
    /// evicting the oldest episode when full. Returns the slot id.
    pub fn store_episode(&mut self, episode: Episode, max_priority: f64) -> Result<usize> {
        episode.validate(self.horizon)?;
        if !(max_priority > 0.0 && max_priority.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "max priority must be positive, got {max_priority}"
            )));
        }
        let slot = self.cursor;
        let record = EpisodeRecord {
            episode,
            pairs: PairPriorityTable::filled(self.horizon, max_priority),
        };
        if slot < self.episodes.len() {
            self.episode_tree.set_leaf(slot, 0.0)?;
            for j in 0..self.horizon {
                self.transition_tree.set_leaf(slot * self.horizon + j, 0.0)?;
            }
            self.episodes[slot] = record;
        } else {
            self.episodes.push(record);
        }
        let leaf = self.episode_leaf(max_priority);
        self.episode_tree.set_leaf(slot, leaf)?;
        for j in 0..self.horizon {
            self.transition_tree.set_leaf(slot * self.horizon + j, leaf)?;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        Ok(slot)
    }

    /// Transition `j` of an episode and the achieved goal of visited state `i`.
    pub fn get_pair(&self, episode_id: usize, j: usize, i: usize) -> Result<(&Transition, &[f64])> {
        pair_index(j, i, self.horizon)?;
        let record = self.record(episode_id)?;
        Ok((
            &record.episode.transitions[j],
            &record.episode.achieved_goals[i],
        ))
    }

    /// Sets pair `(j, i)` to `td_abs + eps` and refreshes the episode's sum-tree
    /// leaf to `(mean + eps)^alpha`. The PER tree entry of transition `j` follows
    /// the same value.
    pub fn update_priority(
        &mut self,
        episode_id: usize,
        (j, i): (usize, usize),
        td_abs: f64,
    ) -> Result<()> {
        if !td_abs.is_finite() {
            return Err(Error::NonFinite("TD error"));
        }
        let td_abs = td_abs.abs();
        let k = pair_index(j, i, self.horizon)?;
        let eps = self.priority_eps;
        let record = self.record_mut(episode_id)?;
        record.pairs.set(k, td_abs + eps);
        let mean = record.pairs.mean();
        let leaf = self.episode_leaf(mean);
        self.episode_tree.set_leaf(episode_id, leaf)?;
        let t_leaf = (td_abs + eps).powf(self.alpha);
        self.transition_tree
            .set_leaf(episode_id * self.horizon + j, t_leaf)?;
        self.max_priority = self.max_priority.max(td_abs);
        Ok(())
    }

    pub fn to_checkpoint(&self) -> BufferCheckpoint {
        let first = self.episodes.first().map(|r| &r.episode);
        let dims = first
            .map(|e| {
                let t = &e.transitions[0];
                (t.state.len(), t.action.len(), t.episode_goal.len())
            })
            .unwrap_or((0, 0, 0));
        let mut transitions = Vec::new();
        let mut achieved = Vec::new();
        let mut pairs = Vec::new();
        for record in &self.episodes {
            for t in &record.episode.transitions {
                transitions.extend_from_slice(&t.state);
                transitions.extend_from_slice(&t.action);
                transitions.extend_from_slice(&t.next_state);
                transitions.extend_from_slice(&t.episode_goal);
            }
            for g in &record.episode.achieved_goals {
                achieved.extend_from_slice(g);
            }
            pairs.extend_from_slice(record.pairs.raw());
        }
        BufferCheckpoint {
            format: BUFFER_FORMAT.into(),
            version: BUFFER_VERSION,
            horizon: self.horizon,
            capacity: self.capacity,
            alpha: self.alpha,
            priority_eps: self.priority_eps,
            max_priority: self.max_priority,
            cursor: self.cursor,
            episode_count: self.episodes.len(),
            state_dim: dims.0,
            action_dim: dims.1,
            goal_dim: dims.2,
            transitions,
            achieved_goals: achieved,
            pair_priorities: pairs,
            episode_tree: self.episode_tree.to_leaves(),
            transition_tree: self.transition_tree.to_leaves(),
        }
    }

    pub fn from_checkpoint(c: &BufferCheckpoint) -> Result<Self> {
        if c.format != BUFFER_FORMAT || c.version != BUFFER_VERSION {
            return Err(Error::Format(format!(
                "expected {BUFFER_FORMAT} v{BUFFER_VERSION}, found {} v{}",
                c.format, c.version
            )));
        }
        let mut buffer = Self::new(c.capacity * c.horizon, c.horizon, c.alpha, c.priority_eps)?;
        let h = c.horizon;
        let k = pair_count(h);
        let (sd, ad, gd) = (c.state_dim, c.action_dim, c.goal_dim);
        let per_transition = 2 * sd + ad + gd;
        let n = c.episode_count;
        if n > c.capacity
            || c.cursor >= c.capacity
            || c.transitions.len() != n * h * per_transition
            || c.achieved_goals.len() != n * (h + 1) * gd
            || c.pair_priorities.len() != n * k
        {
            return Err(Error::Format("buffer arrays disagree with header".into()));
        }
        let mut t_chunks = c.transitions.chunks_exact(per_transition.max(1));
        for e in 0..n {
            let transitions = (0..h)
                .map(|_| {
                    let flat = t_chunks.next().unwrap();
                    Transition {
                        state: flat[..sd].to_vec(),
                        action: flat[sd..sd + ad].to_vec(),
                        next_state: flat[sd + ad..2 * sd + ad].to_vec(),
                        episode_goal: flat[2 * sd + ad..].to_vec(),
                    }
                })
                .collect();
            let base = e * (h + 1) * gd;
            let achieved_goals = (0..=h)
                .map(|t| c.achieved_goals[base + t * gd..base + (t + 1) * gd].to_vec())
                .collect();
            let pairs = PairPriorityTable::from_raw(c.pair_priorities[e * k..(e + 1) * k].to_vec())?;
            buffer.episodes.push(EpisodeRecord {
                episode: Episode {
                    transitions,
                    achieved_goals,
                },
                pairs,
            });
        }
        let episode_tree = SumTree::from_leaves(&c.episode_tree)?;
        let transition_tree = SumTree::from_leaves(&c.transition_tree)?;
        if episode_tree.capacity() != buffer.episode_tree.capacity()
            || transition_tree.capacity() != buffer.transition_tree.capacity()
        {
            return Err(Error::Format("sum-tree capacity disagrees with header".into()));
        }
        buffer.episode_tree = episode_tree;
        buffer.transition_tree = transition_tree;
        buffer.cursor = c.cursor;
        buffer.max_priority = c.max_priority;
        Ok(buffer)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(file, &self.to_checkpoint())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let c: BufferCheckpoint =
            serde_json::from_reader(file).map_err(|e| Error::Format(e.to_string()))?;
        Self::from_checkpoint(&c)
    }
}

pub const BUFFER_FORMAT: &str = "hgr-replay-buffer";
pub const BUFFER_VERSION: u32 = 1;

/// On-disk replay buffer: versioned header, flattened transitions
/// (`state, action, next_state, episode_goal` per row), achieved goals,
/// raw pair priorities and the leaf arrays of both sum-trees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BufferCheckpoint {
    pub format: String,
    pub version: u32,
    pub horizon: usize,
    pub capacity: usize,
    pub alpha: f64,
    pub priority_eps: f64,
    pub max_priority: f64,
    pub cursor: usize,
    pub episode_count: usize,
    pub state_dim: usize,
    pub action_dim: usize,
    pub goal_dim: usize,
    pub transitions: Vec<f64>,
    pub achieved_goals: Vec<f64>,
    pub pair_priorities: Vec<f64>,
    pub episode_tree: SumTreeLeaves,
    pub transition_tree: SumTreeLeaves,
}
