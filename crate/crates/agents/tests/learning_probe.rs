//! Learning smoke test: one seed on the grid must reach near-optimal
//! returns well inside the budget. Heavier multi-seed runs live in the
//! acceptance suite.

use rlstage_agents::{train, AgentConfig, TrainSection};
use rlstage_envs::EnvSpec;
use rlstage_graph::BackendMode;

pub fn grid_agent_config() -> AgentConfig {
    AgentConfig::from_json(
        r#"{
        "agent": "dqn",
        "state_space": {"type": "float_box", "shape": [16], "low": 0.0, "high": 1.0},
        "action_space": {"type": "int_box", "num_categories": 4},
        "network": [{"units": 32, "activation": "relu"}, {"units": 32, "activation": "relu"}],
        "memory": {"capacity": 4096},
        "update": {
            "batch_size": 32, "gamma": 0.95, "learning_rate": 0.001,
            "optimizer": "adam", "n_step": 3,
            "target_sync_interval": 100, "update_interval": 4
        },
        "exploration": {"epsilon_start": 1.0, "epsilon_end": 0.02, "decay_steps": 3000}
    }"#,
    )
    .unwrap()
}

#[test]
fn dqn_learns_the_grid_within_budget() {
    let cfg = grid_agent_config();
    let env = EnvSpec::Gridworld { size: 4, max_steps: 50 };
    let section = TrainSection {
        total_steps: 30_000,
        vector_envs: 1,
        target_return: Some(0.95),
        return_window: 50,
        ..TrainSection::default()
    };
    let out = train(&cfg, &env, &section, BackendMode::Staged, 0).unwrap();
    assert!(
        out.reached_target_at.is_some(),
        "no convergence within {} frames (mean return {:.3}, {} episodes)",
        out.frames,
        out.final_mean_return,
        out.episode_returns.len()
    );
    println!(
        "grid solved at frame {} with {} updates",
        out.reached_target_at.unwrap(),
        out.updates
    );
}
