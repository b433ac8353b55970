//! Goal-conditioned off-policy RL with prioritized hindsight replay.
//!
//! Episodes are stored whole. A replay draw first picks an episode in
//! proportion to the mean TD error of its hindsight pairs, then picks a pair
//! `(j, i)` within it, relabeling transition `j` with the goal achieved at step
//! `i`. Uniform and transition-level prioritized replay are available for
//! comparison.

pub mod agent;
pub mod checkpoint;
pub mod config;
pub mod envs;
pub mod error;
pub mod nn;
pub mod par;
pub mod prioritization;
pub mod replay;
pub mod report;
pub mod scripted;
pub mod sumtree;
pub mod trainer;

pub use agent::{AgentNetworks, Exploration};
pub use config::TrainConfig;
pub use envs::{Env, EnvKind, Physics};
pub use error::{Error, Result};
pub use par::Parallelism;
pub use prioritization::{PrioritizationConfig, Strategy};
pub use replay::{Episode, ReplayBuffer, Transition};
pub use sumtree::SumTree;
