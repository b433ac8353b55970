//! Hand-built controllers expressed as ordinary networks.

use crate::agent::AgentNetworks;
use crate::envs::{EnvKind, Env};
use crate::error::{Error, Result};
use crate::nn::{AdamHyper, Dense, Mlp, OutputActivation};

/// Proportional point-reach controller `tanh(gain * (g - p))` per axis.
///
/// The first layer splits each axis error into its positive and negative
/// parts, the second copies them, and the head recombines them.
pub fn reach_controller(gain: f64) -> Result<Mlp> {
    // input: px, py, gx, gy
    let first = Dense {
        in_dim: 4,
        out_dim: 4,
        weights: vec![
            -1.0, 0.0, 1.0, 0.0, //
            1.0, 0.0, -1.0, 0.0, //
            0.0, -1.0, 0.0, 1.0, //
            0.0, 1.0, 0.0, -1.0,
        ],
        biases: vec![0.0; 4],
    };
    let mut identity = vec![0.0; 16];
    for k in 0..4 {
        identity[k * 5] = 1.0;
    }
    let copy = Dense {
        in_dim: 4,
        out_dim: 4,
        weights: identity,
        biases: vec![0.0; 4],
    };
    let head = Dense {
        in_dim: 4,
        out_dim: 2,
        weights: vec![
            gain, -gain, 0.0, 0.0, //
            0.0, 0.0, gain, -gain,
        ],
        biases: vec![0.0; 2],
    };
    Mlp::from_layers(vec![first, copy, head], OutputActivation::Tanh)
}

/// A point-reach agent that steers straight at the goal. The gain makes a
/// single unsaturated step land on the goal; the critic is all zeros.
pub fn reach_agent(env: &Env) -> Result<AgentNetworks> {
    if env.kind() != EnvKind::PointReach {
        return Err(Error::InvalidArgument("scripted controller only drives point-reach".into()));
    }
    let p = env.physics();
    let actor = reach_controller(1.0 / (p.dt * p.v_max))?;
    let spec = env.spec();
    let critic = Mlp::zeros(
        &[spec.state_dim + spec.goal_dim + spec.action_dim, 4, 1],
        OutputActivation::Identity,
    )?;
    AgentNetworks::from_parts(spec, actor, critic, AdamHyper::default())
}
