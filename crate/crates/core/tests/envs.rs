use hgr_core::envs::{distance, sparse_reward};
use hgr_core::{Env, EnvKind, Physics};
use proptest::prelude::*;

proptest! {
    #[test]
    fn push_keeps_agent_and_box_apart(
        seed in 0u64..10_000,
        actions in prop::collection::vec((-1.5f64..1.5, -1.5f64..1.5), 30),
    ) {
        let p = Physics::default();
        let env = Env::new(EnvKind::PointPush, p).unwrap();
        let (mut state, _) = env.reset(seed);
        let step_bound = p.dt * p.v_max * 2f64.sqrt();
        for (ax, ay) in actions {
            state = env.step(&state, &[ax, ay]).unwrap();
            let o = &state.obs;
            let gap = distance(&o[0..2], &o[2..4]);
            prop_assert!(gap >= p.contact_radius - step_bound - 1e-12, "gap {}", gap);
            prop_assert!(o.iter().all(|v| v.abs() <= p.workspace));
        }
    }

    #[test]
    fn resets_start_away_from_the_goal(seed in 0u64..100_000) {
        for kind in [EnvKind::PointReach, EnvKind::PointPush] {
            let env = Env::new(kind, Physics::default()).unwrap();
            let (state, goal) = env.reset(seed);
            let achieved = env.achieved_goal(&state);
            prop_assert!(distance(&achieved, &goal) >= env.rho());
            prop_assert_eq!(env.reward(&achieved, &goal), -1.0);
            prop_assert!(goal.iter().all(|g| g.abs() <= env.physics().workspace));
        }
    }

    #[test]
    fn reward_is_a_threshold_on_distance(
        a in prop::array::uniform2(-1.0f64..1.0),
        g in prop::array::uniform2(-1.0f64..1.0),
        rho in 0.01f64..0.5,
    ) {
        let r = sparse_reward(&a, &g, rho);
        prop_assert_eq!(r == 0.0, distance(&a, &g) < rho);
        prop_assert!(r == 0.0 || r == -1.0);
    }

    #[test]
    fn reach_moves_by_clipped_velocity(seed in 0u64..10_000, ax in -3.0f64..3.0, ay in -3.0f64..3.0) {
        let env = Env::new(EnvKind::PointReach, Physics::default()).unwrap();
        let (state, _) = env.reset(seed);
        let next = env.step(&state, &[ax, ay]).unwrap();
        let expected = [
            (state.obs[0] + 0.1 * ax.clamp(-1.0, 1.0)).clamp(-1.0, 1.0),
            (state.obs[1] + 0.1 * ay.clamp(-1.0, 1.0)).clamp(-1.0, 1.0),
        ];
        prop_assert!((next.obs[0] - expected[0]).abs() < 1e-15);
        prop_assert!((next.obs[1] - expected[1]).abs() < 1e-15);
    }
}

#[test]
fn push_goals_are_drawn_around_the_box() {
    let p = Physics::default();
    let env = Env::new(EnvKind::PointPush, p).unwrap();
    for seed in 0..2000 {
        let (state, goal) = env.reset(seed);
        let b = &state.obs[2..4];
        assert!((goal[0] - b[0]).abs() <= p.target_range && (goal[1] - b[1]).abs() <= p.target_range);
        assert!(distance(&state.obs[0..2], b) >= 1.5 * p.contact_radius);
    }
}
