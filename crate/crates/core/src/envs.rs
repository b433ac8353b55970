//! Deterministic 2-D goal-reaching tasks with a sparse reward.
//!
//! * `point-reach`: a point mass starting at the origin must end within `rho` of
//!   a goal drawn uniformly from the workspace.
//!   State is the agent position, the goal space is the same position.
//! * `point-push`: the point mass must push a box so the box ends within `rho`
//!   of the goal. State is `[agent_x, agent_y, box_x, box_y]`, the achieved
//!   goal is the box position.
//!
//! Actions are velocity commands in `[-1, 1]^2`; the agent moves
//! `dt * v_max * action` per step and stays inside the square workspace.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// A point in goal space.
pub type GoalValue = Vec<f64>;

/// Physical constants shared by both tasks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Physics {
    pub horizon: usize,
    pub dt: f64,
    pub v_max: f64,
    /// Success tolerance on the goal distance.
    pub rho: f64,
    /// Half-width of the square workspace centred on the origin.
    pub workspace: f64,
    pub contact_radius: f64,
    /// Half-width of the square around the origin where the box starts (push).
    pub object_range: f64,
    /// Half-width of the square around the box's start where push goals are drawn.
    pub target_range: f64,
}

impl Default for Physics {
    fn default() -> Self {
        Self {
            horizon: 30,
            dt: 0.1,
            v_max: 1.0,
            rho: 0.05,
            workspace: 1.0,
            contact_radius: 0.1,
            object_range: 0.2,
            target_range: 0.15,
        }
    }
}

impl Physics {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dt", self.dt),
            ("v_max", self.v_max),
            ("rho", self.rho),
            ("workspace", self.workspace),
            ("contact_radius", self.contact_radius),
            ("object_range", self.object_range),
            ("target_range", self.target_range),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be positive".into()));
        }
        if self.target_range <= self.rho || self.workspace <= self.rho {
            return Err(Error::Config(
                "target_range and workspace must exceed rho so goals can be drawn".into(),
            ));
        }
        if self.object_range > self.workspace || self.target_range > self.workspace {
            return Err(Error::Config(
                "object_range and target_range must fit inside the workspace".into(),
            ));
        }
        if self.object_range < self.contact_radius {
            return Err(Error::Config(
                "object_range must be at least contact_radius".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnvKind {
    PointReach,
    PointPush,
}

impl EnvKind {
    pub fn id(self) -> &'static str {
        match self {
            EnvKind::PointReach => "point-reach",
            EnvKind::PointPush => "point-push",
        }
    }

    pub fn from_id(id: &str) -> Result<Self> {
        match id {
            "point-reach" => Ok(EnvKind::PointReach),
            "point-push" => Ok(EnvKind::PointPush),
            other => Err(Error::Config(format!(
                "unknown env id {other:?}; expected point-reach or point-push"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnvSpec {
    pub state_dim: usize,
    pub action_dim: usize,
    pub goal_dim: usize,
    pub horizon: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub obs: Vec<f64>,
    pub timestep: usize,
}

#[derive(Debug, Clone)]
pub struct Env {
    kind: EnvKind,
    physics: Physics,
}

/// `0` when the achieved goal is strictly within `rho` of the goal, `-1` otherwise.
pub fn sparse_reward(achieved: &[f64], goal: &[f64], rho: f64) -> f64 {
    debug_assert_eq!(achieved.len(), goal.len());
    if distance(achieved, goal) < rho {
        0.0
    } else {
        -1.0
    }
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

impl Env {
    pub fn new(kind: EnvKind, physics: Physics) -> Result<Self> {
        physics.validate()?;
        Ok(Self { kind, physics })
    }

    pub fn from_id(id: &str, physics: Physics) -> Result<Self> {
        Self::new(EnvKind::from_id(id)?, physics)
    }

    pub fn kind(&self) -> EnvKind {
        self.kind
    }

    pub fn physics(&self) -> &Physics {
        &self.physics
    }

    pub fn rho(&self) -> f64 {
        self.physics.rho
    }

    pub fn horizon(&self) -> usize {
        self.physics.horizon
    }

    pub fn spec(&self) -> EnvSpec {
        let state_dim = match self.kind {
            EnvKind::PointReach => 2,
            EnvKind::PointPush => 4,
        };
        EnvSpec {
            state_dim,
            action_dim: 2,
            goal_dim: 2,
            horizon: self.physics.horizon,
        }
    }

    /// Draws the initial state and the episode goal. A pure function of `seed`.
    pub fn reset(&self, seed: u64) -> (EnvState, GoalValue) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = &self.physics;
        let square = |rng: &mut ChaCha8Rng, half: f64| -> [f64; 2] {
            [rng.random_range(-half..half), rng.random_range(-half..half)]
        };
        // the agent always starts at the origin
        let agent = [0.0, 0.0];
        let obs = match self.kind {
            EnvKind::PointReach => agent.to_vec(),
            EnvKind::PointPush => {
                // the box starts clear of the agent so the contact invariant holds from t=0
                let boxed = loop {
                    let b = square(&mut rng, p.object_range);
                    if distance(&b, &agent) >= 1.5 * p.contact_radius {
                        break b;
                    }
                };
                vec![agent[0], agent[1], boxed[0], boxed[1]]
            }
        };
        let state = EnvState { obs, timestep: 0 };
        let start = self.achieved_goal(&state);
        let (center, half) = match self.kind {
            EnvKind::PointReach => ([0.0, 0.0], p.workspace),
            EnvKind::PointPush => ([start[0], start[1]], p.target_range),
        };
        let goal = loop {
            let o = square(&mut rng, half);
            let g = [
                (center[0] + o[0]).clamp(-p.workspace, p.workspace),
                (center[1] + o[1]).clamp(-p.workspace, p.workspace),
            ];
            if distance(&g, &start) >= p.rho {
                break g.to_vec();
            }
        };
        (state, goal)
    }

    pub fn step(&self, state: &EnvState, action: &[f64]) -> Result<EnvState> {
        let spec = self.spec();
        check_len("action", spec.action_dim, action.len())?;
        check_len("state", spec.state_dim, state.obs.len())?;
        if state.timestep >= spec.horizon {
            return Err(Error::HorizonExceeded(spec.horizon));
        }
        if action.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite("action"));
        }
        let p = &self.physics;
        let w = p.workspace;
        let scale = p.dt * p.v_max;
        let delta = [
            action[0].clamp(-1.0, 1.0) * scale,
            action[1].clamp(-1.0, 1.0) * scale,
        ];
        let agent = [state.obs[0], state.obs[1]];
        let mut moved = [
            (agent[0] + delta[0]).clamp(-w, w),
            (agent[1] + delta[1]).clamp(-w, w),
        ];

        let obs = match self.kind {
            EnvKind::PointReach => moved.to_vec(),
            EnvKind::PointPush => {
                let mut boxed = [state.obs[2], state.obs[3]];
                let before = distance(&agent, &boxed);
                if distance(&moved, &boxed) < p.contact_radius && before > 0.0 {
                    let axis = [(boxed[0] - agent[0]) / before, (boxed[1] - agent[1]) / before];
                    let step = [moved[0] - agent[0], moved[1] - agent[1]];
                    let along = (step[0] * axis[0] + step[1] * axis[1]).max(0.0);
                    boxed = [
                        (boxed[0] + along * axis[0]).clamp(-w, w),
                        (boxed[1] + along * axis[1]).clamp(-w, w),
                    ];
                    // a box pinned by the wall blocks the agent instead
                    let floor = before.min(p.contact_radius);
                    let gap = distance(&moved, &boxed);
                    if gap < floor {
                        if gap > 0.0 {
                            let k = floor / gap;
                            moved = [
                                boxed[0] + (moved[0] - boxed[0]) * k,
                                boxed[1] + (moved[1] - boxed[1]) * k,
                            ];
                        } else {
                            moved = agent;
                        }
                    }
                }
                vec![moved[0], moved[1], boxed[0], boxed[1]]
            }
        };
        Ok(EnvState {
            obs,
            timestep: state.timestep + 1,
        })
    }

    pub fn achieved_goal(&self, state: &EnvState) -> GoalValue {
        self.achieved_goal_of(&state.obs).to_vec()
    }

    pub fn achieved_goal_of<'a>(&self, obs: &'a [f64]) -> &'a [f64] {
        match self.kind {
            EnvKind::PointReach => &obs[0..2],
            EnvKind::PointPush => &obs[2..4],
        }
    }

    pub fn reward(&self, achieved: &[f64], goal: &[f64]) -> f64 {
        sparse_reward(achieved, goal, self.physics.rho)
    }
}
