//! Rollouts, optimization cycles, evaluation and multi-seed training runs.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agent::{AgentNetworks, CriticSample, Exploration, UpdateStats};
use crate::checkpoint;
use crate::config::TrainConfig;
use crate::envs::Env;
use crate::error::{Error, Result};
use crate::par::{self, Parallelism};
use crate::prioritization::{sample_batch, PrioritizationConfig};
use crate::replay::{Episode, ReplayBuffer, Transition};

pub const METRICS_FILE: &str = "metrics.csv";
pub const METRICS_HEADER: &str = "seed,epoch,interactions,success_rate,mean_return,wall_secs";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeStats {
    pub total_return: f64,
    /// Whether the final state reached the goal.
    pub success: bool,
}

/// Runs one episode with the behavior policy and records it for replay.
pub fn rollout_episode<R: Rng + ?Sized>(
    env: &Env,
    agent: &AgentNetworks,
    exploration: &Exploration,
    reset_seed: u64,
    rng: &mut R,
) -> Result<(Episode, EpisodeStats)> {
    let (mut state, goal) = env.reset(reset_seed);
    let h = env.horizon();
    let mut transitions = Vec::with_capacity(h);
    let mut achieved_goals = Vec::with_capacity(h + 1);
    achieved_goals.push(env.achieved_goal(&state));
    let mut total_return = 0.0;
    let mut last_reward = -1.0;
    for _ in 0..h {
        let action = agent.behavior_action(&state.obs, &goal, exploration, rng)?;
        let next = env.step(&state, &action)?;
        let achieved = env.achieved_goal(&next);
        last_reward = env.reward(&achieved, &goal);
        total_return += last_reward;
        transitions.push(Transition {
            state: state.obs.clone(),
            action,
            next_state: next.obs.clone(),
            episode_goal: goal.clone(),
        });
        achieved_goals.push(achieved);
        state = next;
    }
    Ok((
        Episode {
            transitions,
            achieved_goals,
        },
        EpisodeStats {
            total_return,
            success: last_reward == 0.0,
        },
    ))
}

/// Hyperparameters of one optimization cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeSettings {
    pub batch_size: usize,
    pub gradient_steps: usize,
    pub gamma: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub polyak: f64,
    pub action_l2: f64,
    /// Clamp TD targets to the attainable return range of the sparse reward.
    pub clip_target: bool,
    pub prioritization: PrioritizationConfig,
}

impl OptimizeSettings {
    /// Returns under rewards in `{-1, 0}` lie in `[-1/(1-gamma), 0]`.
    pub fn target_range(&self) -> Option<(f64, f64)> {
        self.clip_target.then(|| (-1.0 / (1.0 - self.gamma), 0.0))
    }

    pub fn from_config(cfg: &TrainConfig) -> Self {
        Self {
            batch_size: cfg.batch_size,
            gradient_steps: cfg.gradient_steps,
            gamma: cfg.gamma,
            actor_lr: cfg.actor_lr,
            critic_lr: cfg.critic_lr,
            polyak: cfg.polyak,
            action_l2: cfg.action_l2,
            clip_target: cfg.clip_target,
            prioritization: cfg.prioritization(),
        }
    }
}

/// `gradient_steps` minibatch updates followed by one target update.
///
/// Each step samples a batch, recomputes rewards against the sampled goals,
/// evaluates TD errors with the current parameters, writes the new priorities
/// back, and then takes one Adam step on the critic and one on the actor. Both
/// gradients come from the parameters as they were before the step.
pub fn optimize_cycle<R: Rng + ?Sized>(
    agent: &mut AgentNetworks,
    buffer: &mut ReplayBuffer,
    env: &Env,
    settings: &OptimizeSettings,
    step: u64,
    rng: &mut R,
) -> Result<UpdateStats> {
    let mut stats = UpdateStats::default();
    for _ in 0..settings.gradient_steps {
        let batch = sample_batch(buffer, &settings.prioritization, settings.batch_size, step, rng)?;
        let weights: Vec<f64> = batch.items.iter().map(|it| it.weight).collect();
        let (td, critic_grads, critic_loss, actor_grads, actor_objective) = {
            let mut samples = Vec::with_capacity(batch.items.len());
            for item in &batch.items {
                let (t, _) = buffer.get_pair(item.episode_id, item.pair.0, item.pair.1)?;
                let reward = env.reward(env.achieved_goal_of(&t.next_state), &item.goal);
                samples.push(CriticSample {
                    state: &t.state,
                    action: &t.action,
                    next_state: &t.next_state,
                    goal: &item.goal,
                    reward,
                });
            }
            let td = agent.td_errors_clipped(&samples, settings.gamma, settings.target_range())?;
            let (cg, closs) = agent.critic_gradients(&td, &weights)?;
            let sg: Vec<(&[f64], &[f64])> =
                samples.iter().map(|s| (s.state, s.goal)).collect();
            let (ag, aobj) = agent.actor_gradients(&sg, settings.action_l2)?;
            (td.deltas, cg, closs, ag, aobj)
        };
        for (item, d) in batch.items.iter().zip(&td) {
            if item.relabeled {
                buffer.update_priority(item.episode_id, item.pair, d.abs())?;
            }
        }
        if !critic_grads.is_finite() || !actor_grads.is_finite() {
            return Err(Error::NonFinite("gradient"));
        }
        agent
            .critic_opt
            .step(&mut agent.critic, &critic_grads, settings.critic_lr)?;
        agent
            .actor_opt
            .step(&mut agent.actor, &actor_grads, settings.actor_lr)?;
        stats.critic_loss += critic_loss;
        stats.actor_objective += actor_objective;
        stats.mean_abs_td += td.iter().map(|d| d.abs()).sum::<f64>() / td.len() as f64;
    }
    agent.sync_targets(settings.polyak)?;
    let n = settings.gradient_steps.max(1) as f64;
    stats.critic_loss /= n;
    stats.actor_objective /= n;
    stats.mean_abs_td /= n;
    Ok(stats)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    pub success_rate: f64,
    pub mean_return: f64,
}

/// Reset seed of evaluation episode `k`; disjoint from training resets.
pub fn eval_reset_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (0xE7A1_0000_0000_0000 | k as u64)
}

/// Noise-free rollouts; success is judged on the final state.
pub fn evaluate(
    agent: &AgentNetworks,
    env: &Env,
    episodes: usize,
    seed: u64,
    mode: Parallelism,
) -> Result<EvalResult> {
    if episodes == 0 {
        return Err(Error::InvalidArgument("evaluation needs at least one episode".into()));
    }
    let results = par::map(mode, (0..episodes).collect(), |k| {
        let mut unused = ChaCha8Rng::seed_from_u64(0);
        rollout_episode(env, agent, &Exploration::NONE, eval_reset_seed(seed, k), &mut unused)
            .map(|(_, s)| s)
    });
    let mut successes = 0usize;
    let mut total = 0.0;
    for r in results {
        let s = r?;
        successes += s.success as usize;
        total += s.total_return;
    }
    Ok(EvalResult {
        success_rate: successes as f64 / episodes as f64,
        mean_return: total / episodes as f64,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub seed: u64,
    pub epoch: usize,
    pub interactions: u64,
    pub success_rate: f64,
    pub mean_return: f64,
    pub wall_secs: f64,
}

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{:.3}",
            self.seed, self.epoch, self.interactions, self.success_rate, self.mean_return, self.wall_secs
        )
    }
}

pub struct SeedRun {
    pub seed: u64,
    pub metrics: Vec<EpochMetrics>,
    pub agent: AgentNetworks,
    pub buffer: ReplayBuffer,
    pub interactions: u64,
    pub episodes: usize,
}

/// Independent random streams of one seed.
fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Trains one seed, calling `on_epoch` after every evaluation.
///
/// Evaluation runs sequentially here; parallelism across seeds is handled by
/// [`run_seeds`].
pub fn train_seed<F>(cfg: &TrainConfig, seed: u64, mut on_epoch: F) -> Result<SeedRun>
where
    F: FnMut(&EpochMetrics) -> Result<()>,
{
    cfg.validate()?;
    let env = Env::new(cfg.env_kind()?, cfg.physics)?;
    let h = env.horizon() as u64;
    let mut init_rng = stream(seed, 0);
    let mut explore_rng = stream(seed, 1);
    let mut replay_rng = stream(seed, 2);
    let mut reset_rng = stream(seed, 3);
    let mut agent = AgentNetworks::new(env.spec(), &cfg.hidden_layers, &mut init_rng)?;
    let mut buffer = ReplayBuffer::new(cfg.buffer_size, env.horizon(), cfg.alpha, cfg.priority_eps)?;
    let settings = OptimizeSettings::from_config(cfg);
    let eval_interval = cfg.resolved_eval_interval();
    let started = Instant::now();

    let mut metrics = Vec::new();
    let mut interactions = 0u64;
    let mut episodes = 0usize;
    let mut next_eval = eval_interval;
    let mut evaluated_at = None;
    let mut record = |agent: &AgentNetworks,
                      interactions: u64,
                      metrics: &mut Vec<EpochMetrics>|
     -> Result<f64> {
        let r = evaluate(agent, &env, cfg.eval_episodes, seed, Parallelism::Sequential)?;
        let m = EpochMetrics {
            seed,
            epoch: metrics.len() + 1,
            interactions,
            success_rate: r.success_rate,
            mean_return: r.mean_return,
            wall_secs: started.elapsed().as_secs_f64(),
        };
        on_epoch(&m)?;
        metrics.push(m);
        Ok(r.success_rate)
    };

    while interactions + h <= cfg.total_interactions {
        let (episode, _) =
            rollout_episode(&env, &agent, &cfg.exploration, reset_rng.random(), &mut explore_rng)?;
        buffer.store(episode)?;
        interactions += h;
        episodes += 1;
        if episodes.is_multiple_of(cfg.update_frequency) {
            optimize_cycle(&mut agent, &mut buffer, &env, &settings, interactions, &mut replay_rng)?;
        }
        if interactions >= next_eval {
            while next_eval <= interactions {
                next_eval += eval_interval;
            }
            let rate = record(&agent, interactions, &mut metrics)?;
            evaluated_at = Some(interactions);
            if cfg.stop_success.is_some_and(|s| rate >= s) {
                break;
            }
        }
    }
    if evaluated_at != Some(interactions) {
        record(&agent, interactions, &mut metrics)?;
    }
    Ok(SeedRun {
        seed,
        metrics,
        agent,
        buffer,
        interactions,
        episodes,
    })
}

/// Trains every seed of `cfg`, in parallel when enabled. Runs are returned in
/// seed order and do not depend on the mode.
pub fn run_seeds<F>(cfg: &TrainConfig, mode: Parallelism, on_epoch: F) -> Result<Vec<SeedRun>>
where
    F: Fn(&EpochMetrics) -> Result<()> + Sync + Send,
{
    par::map(mode, cfg.seeds.clone(), |seed| train_seed(cfg, seed, &on_epoch))
        .into_iter()
        .collect()
}

pub fn checkpoint_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("agent-seed{seed}.json"))
}

pub fn buffer_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("buffer-seed{seed}.json"))
}

/// Full training run writing `metrics.csv` and per-seed checkpoints into
/// `cfg.output_dir`. Metric rows are flushed as soon as they are produced.
pub fn run_training(cfg: &TrainConfig) -> Result<Vec<SeedRun>> {
    cfg.validate()?;
    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir)?;
    let mut writer = BufWriter::new(File::create(dir.join(METRICS_FILE))?);
    writeln!(writer, "{METRICS_HEADER}")?;
    writer.flush()?;
    let writer = Mutex::new(writer);
    let env_id = cfg.env_kind()?.id();
    let runs = run_seeds(cfg, Parallelism::select(cfg.parallel), |m| {
        let mut w = writer.lock().map_err(|_| Error::Metrics("metrics writer poisoned".into()))?;
        writeln!(w, "{}", m.csv_row())?;
        w.flush()?;
        Ok(())
    })?;
    for run in &runs {
        checkpoint::save_agent(&checkpoint_path(dir, run.seed), env_id, cfg.physics, &run.agent)?;
        if cfg.save_buffer {
            run.buffer.save(&buffer_path(dir, run.seed))?;
        }
    }
    Ok(runs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{EnvKind, Physics};

    fn tiny(env: &str) -> TrainConfig {
        let mut cfg = TrainConfig::default();
        cfg.apply_overrides(&[
            format!("env={env}"),
            "horizon=5".into(),
            "total_interactions=15".into(),
            "batch_size=8".into(),
            "gradient_steps=2".into(),
            "hidden_layers=8".into(),
            "eval_episodes=2".into(),
            "eval_interval=10".into(),
        ])
        .unwrap();
        cfg
    }

    #[test]
    fn budget_counts_whole_episodes() {
        let run = train_seed(&tiny("point-reach"), 4, |_| Ok(())).unwrap();
        assert_eq!(run.episodes, 3);
        assert_eq!(run.interactions, 15);
        assert_eq!(run.buffer.len(), 3);
        let at: Vec<u64> = run.metrics.iter().map(|m| m.interactions).collect();
        assert_eq!(at, vec![10, 15]);
    }

    #[test]
    fn rollout_records_horizon_transitions() {
        let env = Env::new(EnvKind::PointPush, Physics::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let agent = AgentNetworks::new(env.spec(), &[8], &mut rng).unwrap();
        let (ep, _) = rollout_episode(&env, &agent, &Exploration::default(), 3, &mut rng).unwrap();
        ep.validate(env.horizon()).unwrap();
        for (t, pair) in ep.transitions.windows(2).enumerate() {
            assert_eq!(pair[0].next_state, pair[1].state, "step {t}");
        }
    }

    #[test]
    fn sampled_priorities_are_refreshed() {
        let cfg = tiny("point-reach");
        let env = Env::new(EnvKind::PointReach, cfg.physics).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut agent = AgentNetworks::new(env.spec(), &[8], &mut rng).unwrap();
        let mut buffer = ReplayBuffer::new(100, 5, 0.6, 1e-6).unwrap();
        for s in 0..3 {
            let (ep, _) = rollout_episode(&env, &agent, &cfg.exploration, s, &mut rng).unwrap();
            buffer.store(ep).unwrap();
        }
        let mut settings = OptimizeSettings::from_config(&cfg);
        settings.gradient_steps = 1;
        let before = agent.clone();
        let mut sample_rng = ChaCha8Rng::seed_from_u64(9);
        let mut replay_rng = sample_rng.clone();
        optimize_cycle(&mut agent, &mut buffer, &env, &settings, 5, &mut replay_rng).unwrap();

        // replay the same draw against the pre-update networks
        let mut shadow = ReplayBuffer::new(100, 5, 0.6, 1e-6).unwrap();
        let mut rng2 = ChaCha8Rng::seed_from_u64(2);
        let _ = AgentNetworks::new(env.spec(), &[8], &mut rng2).unwrap();
        for s in 0..3 {
            let (ep, _) = rollout_episode(&env, &before, &cfg.exploration, s, &mut rng2).unwrap();
            shadow.store(ep).unwrap();
        }
        let batch = sample_batch(&mut shadow, &settings.prioritization, 8, 5, &mut sample_rng).unwrap();
        // items that kept the episode goal leave priorities untouched
        let relabeled: Vec<_> = batch.items.iter().filter(|it| it.relabeled).collect();
        assert!(!relabeled.is_empty());
        for item in relabeled {
            let (t, _) = shadow.get_pair(item.episode_id, item.pair.0, item.pair.1).unwrap();
            let sample = CriticSample {
                state: &t.state,
                action: &t.action,
                next_state: &t.next_state,
                goal: &item.goal,
                reward: env.reward(env.achieved_goal_of(&t.next_state), &item.goal),
            };
            let delta = before
                .td_errors_clipped(&[sample], settings.gamma, settings.target_range())
                .unwrap()
                .deltas[0];
            let k = crate::replay::pair_index(item.pair.0, item.pair.1, 5).unwrap();
            let stored = buffer.record(item.episode_id).unwrap().pairs.get(k);
            // duplicates in a batch keep the last write, which has the same value
            assert!((stored - (delta.abs() + 1e-6)).abs() < 1e-9);
        }
    }
}
