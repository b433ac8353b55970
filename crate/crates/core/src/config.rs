//! Flat `key = value` training configuration.
//!
//! Every field of [`TrainConfig`] has exactly one key. Values can come from a
//! config file, from `HGR_<KEY>` environment variables, or from explicit
//! overrides; later sources win. `to_pairs` reproduces the effective values in
//! a form that parses back to an identical config.

use std::path::PathBuf;

use crate::agent::Exploration;
use crate::envs::{EnvKind, Physics};
use crate::error::{Error, Result};
use crate::prioritization::{PrioritizationConfig, Strategy};
use crate::replay::DEFAULT_PRIORITY_EPS;

pub const ENV_PREFIX: &str = "HGR_";

pub const KEYS: &[&str] = &[
    "env",
    "seeds",
    "total_interactions",
    "horizon",
    "buffer_size",
    "batch_size",
    "update_frequency",
    "gradient_steps",
    "actor_lr",
    "critic_lr",
    "gamma",
    "polyak",
    "action_l2",
    "clip_target",
    "hidden_layers",
    "strategy",
    "alpha",
    "alpha_prime",
    "beta",
    "beta_prime",
    "anneal_steps",
    "hindsight",
    "relabel_probability",
    "priority_eps",
    "gaussian_sigma",
    "epsilon_greedy",
    "eval_episodes",
    "eval_interval",
    "stop_success",
    "dt",
    "v_max",
    "rho",
    "workspace",
    "contact_radius",
    "object_range",
    "target_range",
    "output_dir",
    "save_buffer",
    "parallel",
];

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub env: Option<String>,
    pub seeds: Vec<u64>,
    pub total_interactions: u64,
    pub physics: Physics,
    /// Replay capacity in transitions.
    pub buffer_size: usize,
    pub batch_size: usize,
    /// Optimize after every `update_frequency` episodes.
    pub update_frequency: usize,
    pub gradient_steps: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub gamma: f64,
    pub polyak: f64,
    pub action_l2: f64,
    /// Clamp TD targets to `[-1/(1-gamma), 0]`.
    pub clip_target: bool,
    pub hidden_layers: Vec<usize>,
    pub strategy: Strategy,
    pub alpha: f64,
    pub alpha_prime: f64,
    pub beta: f64,
    pub beta_prime: f64,
    /// `None` anneals over the whole interaction budget.
    pub anneal_steps: Option<u64>,
    pub hindsight: bool,
    pub relabel_probability: f64,
    pub priority_eps: f64,
    pub exploration: Exploration,
    pub eval_episodes: usize,
    /// `None` evaluates every `10 * horizon` interactions.
    pub eval_interval: Option<u64>,
    /// Stop a seed early once its evaluation success reaches this rate.
    pub stop_success: Option<f64>,
    pub output_dir: PathBuf,
    pub save_buffer: bool,
    pub parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            env: None,
            seeds: vec![1],
            total_interactions: 60_000,
            physics: Physics::default(),
            buffer_size: 1_000_000,
            batch_size: 256,
            update_frequency: 1,
            gradient_steps: 40,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            gamma: 0.98,
            polyak: 0.95,
            action_l2: 1.0,
            clip_target: true,
            hidden_layers: vec![64, 64],
            strategy: Strategy::Hgr,
            alpha: 0.6,
            alpha_prime: 0.6,
            beta: 0.4,
            beta_prime: 0.4,
            anneal_steps: None,
            hindsight: true,
            relabel_probability: 0.8,
            priority_eps: DEFAULT_PRIORITY_EPS,
            exploration: Exploration::default(),
            eval_episodes: 10,
            eval_interval: None,
            stop_success: None,
            output_dir: PathBuf::from("runs"),
            save_buffer: false,
            parallel: true,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn parse_optional<T: std::str::FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    match value.trim() {
        "auto" | "none" | "off" | "" => Ok(None),
        v => parse(key, v).map(Some),
    }
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn optional<T: ToString>(v: &Option<T>, none: &str) -> String {
    v.as_ref().map_or_else(|| none.to_string(), T::to_string)
}

pub fn unknown_key(key: &str) -> Error {
    Error::Config(format!(
        "unknown key {key:?}; valid keys are: {}",
        KEYS.join(", ")
    ))
}

impl TrainConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "env" => self.env = Some(value.to_string()).filter(|v| !v.is_empty()),
            "seeds" => self.seeds = parse_list(key, value)?,
            "total_interactions" => self.total_interactions = parse(key, value)?,
            "horizon" => self.physics.horizon = parse(key, value)?,
            "buffer_size" => self.buffer_size = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "update_frequency" => self.update_frequency = parse(key, value)?,
            "gradient_steps" => self.gradient_steps = parse(key, value)?,
            "actor_lr" => self.actor_lr = parse(key, value)?,
            "critic_lr" => self.critic_lr = parse(key, value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "polyak" => self.polyak = parse(key, value)?,
            "action_l2" => self.action_l2 = parse(key, value)?,
            "clip_target" => self.clip_target = parse(key, value)?,
            "hidden_layers" => self.hidden_layers = parse_list(key, value)?,
            "strategy" => self.strategy = Strategy::parse(value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "alpha_prime" => self.alpha_prime = parse(key, value)?,
            "beta" => self.beta = parse(key, value)?,
            "beta_prime" => self.beta_prime = parse(key, value)?,
            "anneal_steps" => self.anneal_steps = parse_optional(key, value)?,
            "hindsight" => self.hindsight = parse(key, value)?,
            "relabel_probability" => self.relabel_probability = parse(key, value)?,
            "priority_eps" => self.priority_eps = parse(key, value)?,
            "gaussian_sigma" => self.exploration.gaussian_sigma = parse(key, value)?,
            "epsilon_greedy" => self.exploration.epsilon_greedy = parse(key, value)?,
            "eval_episodes" => self.eval_episodes = parse(key, value)?,
            "eval_interval" => self.eval_interval = parse_optional(key, value)?,
            "stop_success" => self.stop_success = parse_optional(key, value)?,
            "dt" => self.physics.dt = parse(key, value)?,
            "v_max" => self.physics.v_max = parse(key, value)?,
            "rho" => self.physics.rho = parse(key, value)?,
            "workspace" => self.physics.workspace = parse(key, value)?,
            "contact_radius" => self.physics.contact_radius = parse(key, value)?,
            "object_range" => self.physics.object_range = parse(key, value)?,
            "target_range" => self.physics.target_range = parse(key, value)?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            "save_buffer" => self.save_buffer = parse(key, value)?,
            "parallel" => self.parallel = parse(key, value)?,
            _ => return Err(unknown_key(key)),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Result<String> {
        let p = &self.physics;
        Ok(match key {
            "env" => self.env.clone().unwrap_or_default(),
            "seeds" => join(&self.seeds),
            "total_interactions" => self.total_interactions.to_string(),
            "horizon" => p.horizon.to_string(),
            "buffer_size" => self.buffer_size.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "update_frequency" => self.update_frequency.to_string(),
            "gradient_steps" => self.gradient_steps.to_string(),
            "actor_lr" => self.actor_lr.to_string(),
            "critic_lr" => self.critic_lr.to_string(),
            "gamma" => self.gamma.to_string(),
            "polyak" => self.polyak.to_string(),
            "action_l2" => self.action_l2.to_string(),
            "clip_target" => self.clip_target.to_string(),
            "hidden_layers" => join(&self.hidden_layers),
            "strategy" => self.strategy.as_str().to_string(),
            "alpha" => self.alpha.to_string(),
            "alpha_prime" => self.alpha_prime.to_string(),
            "beta" => self.beta.to_string(),
            "beta_prime" => self.beta_prime.to_string(),
            "anneal_steps" => optional(&self.anneal_steps, "auto"),
            "hindsight" => self.hindsight.to_string(),
            "relabel_probability" => self.relabel_probability.to_string(),
            "priority_eps" => self.priority_eps.to_string(),
            "gaussian_sigma" => self.exploration.gaussian_sigma.to_string(),
            "epsilon_greedy" => self.exploration.epsilon_greedy.to_string(),
            "eval_episodes" => self.eval_episodes.to_string(),
            "eval_interval" => optional(&self.eval_interval, "auto"),
            "stop_success" => optional(&self.stop_success, "off"),
            "dt" => p.dt.to_string(),
            "v_max" => p.v_max.to_string(),
            "rho" => p.rho.to_string(),
            "workspace" => p.workspace.to_string(),
            "contact_radius" => p.contact_radius.to_string(),
            "object_range" => p.object_range.to_string(),
            "target_range" => p.target_range.to_string(),
            "output_dir" => self.output_dir.display().to_string(),
            "save_buffer" => self.save_buffer.to_string(),
            "parallel" => self.parallel.to_string(),
            _ => return Err(unknown_key(key)),
        })
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        KEYS.iter()
            .map(|k| (k.to_string(), self.get(k).expect("every listed key is readable")))
            .collect()
    }

    /// Serializes the effective config as a `key = value` file.
    pub fn to_file_string(&self) -> String {
        self.to_pairs()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Applies a `key = value` file. Blank lines and `#` comments are ignored.
    pub fn apply_file_str(&mut self, text: &str) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value, got {line:?}", lineno + 1))
            })?;
            self.set(key.trim(), value)
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    /// Applies `HGR_<KEY>` variables; the key part is matched case-insensitively.
    pub fn apply_env<I: IntoIterator<Item = (String, String)>>(&mut self, vars: I) -> Result<()> {
        for (name, value) in vars {
            if let Some(key) = name.strip_prefix(ENV_PREFIX) {
                self.set(&key.to_ascii_lowercase(), &value)?;
            }
        }
        Ok(())
    }

    /// Applies `key=value` override strings.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn env_kind(&self) -> Result<EnvKind> {
        let id = self
            .env
            .as_deref()
            .ok_or_else(|| Error::Config("missing env id (point-reach or point-push)".into()))?;
        EnvKind::from_id(id)
    }

    pub fn horizon(&self) -> usize {
        self.physics.horizon
    }

    pub fn resolved_eval_interval(&self) -> u64 {
        self.eval_interval
            .unwrap_or(10 * self.physics.horizon as u64)
    }

    pub fn prioritization(&self) -> PrioritizationConfig {
        PrioritizationConfig {
            strategy: self.strategy,
            alpha: self.alpha,
            alpha_prime: self.alpha_prime,
            beta0: self.beta,
            beta0_prime: self.beta_prime,
            anneal_steps: self.anneal_steps.unwrap_or(self.total_interactions).max(1),
            hindsight: self.hindsight,
            relabel_probability: self.relabel_probability,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.env_kind()?;
        self.physics.validate()?;
        self.prioritization().validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        let positive_ints = [
            ("total_interactions", self.total_interactions as usize),
            ("buffer_size", self.buffer_size),
            ("batch_size", self.batch_size),
            ("update_frequency", self.update_frequency),
            ("gradient_steps", self.gradient_steps),
            ("eval_episodes", self.eval_episodes),
        ];
        for (name, v) in positive_ints {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.buffer_size < self.physics.horizon {
            return Err(Error::Config("buffer_size must hold at least one episode".into()));
        }
        if self.eval_interval == Some(0) {
            return Err(Error::Config("eval_interval must be positive".into()));
        }
        if self.hidden_layers.is_empty() || self.hidden_layers.contains(&0) {
            return Err(Error::Config("hidden_layers must list positive widths".into()));
        }
        for (name, v) in [
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
            ("priority_eps", self.priority_eps),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config("gamma must lie in [0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.polyak) {
            return Err(Error::Config("polyak must lie in [0, 1]".into()));
        }
        if !(self.action_l2 >= 0.0 && self.action_l2.is_finite()) {
            return Err(Error::Config("action_l2 must be nonnegative".into()));
        }
        let e = &self.exploration;
        if !(e.gaussian_sigma >= 0.0 && e.gaussian_sigma.is_finite())
            || !(0.0..=1.0).contains(&e.epsilon_greedy)
        {
            return Err(Error::Config(
                "gaussian_sigma must be nonnegative and epsilon_greedy in [0, 1]".into(),
            ));
        }
        if let Some(s) = self.stop_success {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::Config("stop_success must lie in [0, 1]".into()));
            }
        }
        Ok(())
    }
}
