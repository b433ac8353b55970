//! Agent checkpoints as self-describing JSON.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::AgentNetworks;
use crate::envs::Physics;
use crate::error::{Error, Result};

pub const AGENT_FORMAT: &str = "hgr-agent";
pub const AGENT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentCheckpoint {
    pub format: String,
    pub version: u32,
    pub env: String,
    pub physics: Physics,
    pub networks: AgentNetworks,
}

impl AgentCheckpoint {
    pub fn new(env: &str, physics: Physics, networks: AgentNetworks) -> Self {
        Self {
            format: AGENT_FORMAT.to_string(),
            version: AGENT_VERSION,
            env: env.to_string(),
            physics,
            networks,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != AGENT_FORMAT {
            return Err(Error::Format(format!("not an agent checkpoint: {:?}", self.format)));
        }
        if self.version != AGENT_VERSION {
            return Err(Error::Format(format!("unsupported agent version {}", self.version)));
        }
        let env = crate::envs::Env::from_id(&self.env, self.physics)?;
        let spec = env.spec();
        let n = &self.networks;
        if (n.state_dim, n.goal_dim, n.action_dim) != (spec.state_dim, spec.goal_dim, spec.action_dim) {
            return Err(Error::Format(format!("networks do not fit {}", self.env)));
        }
        self.networks.validate()
    }

    pub fn env(&self) -> Result<crate::envs::Env> {
        crate::envs::Env::from_id(&self.env, self.physics)
    }
}

pub fn save_agent(path: &Path, env: &str, physics: Physics, networks: &AgentNetworks) -> Result<()> {
    let ckpt = AgentCheckpoint::new(env, physics, networks.clone());
    std::fs::write(path, serde_json::to_vec(&ckpt)?)?;
    Ok(())
}

pub fn load_agent(path: &Path) -> Result<AgentCheckpoint> {
    let bytes = std::fs::read(path)?;
    let ckpt: AgentCheckpoint = serde_json::from_slice(&bytes)?;
    ckpt.validate()?;
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{Env, EnvKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_exact() {
        let env = Env::new(EnvKind::PointPush, Physics::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let agent = AgentNetworks::new(env.spec(), &[16, 16], &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.json");
        save_agent(&path, "point-push", Physics::default(), &agent).unwrap();
        let back = load_agent(&path).unwrap();
        assert_eq!(back.networks, agent);
        assert_eq!(back.env, "point-push");
    }

    #[test]
    fn wrong_format_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.json");
        std::fs::write(&path, r#"{"format":"other","version":1,"env":"point-reach","physics":null,"networks":null}"#).unwrap();
        assert!(load_agent(&path).is_err());
    }
}
