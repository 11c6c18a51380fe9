//! Environments: a state/action interface, two deterministic-physics
//! built-ins, and a sequential vectorized wrapper.

pub mod cartpole;
pub mod gridworld;
pub mod vector;

pub use cartpole::CartPole;
pub use gridworld::GridWorld;
pub use vector::{FinishedEpisode, VectorEnv};

use rlstage_core::{Space, Value};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Error, Debug)]
pub enum EnvError {
    #[error("episode already terminal; reset before stepping")]
    SteppedTerminal,
    #[error("invalid action: {0}")]
    InvalidAction(String),
    #[error("unknown environment '{0}'")]
    UnknownEnvironment(String),
    #[error(transparent)]
    Core(#[from] rlstage_core::CoreError),
}

pub type EnvResult<T> = std::result::Result<T, EnvError>;

/// Anything exposing a state representation and an action interface.
pub trait Environment: Send {
    fn state_space(&self) -> Space;
    fn action_space(&self) -> Space;
    fn reset(&mut self) -> Value;
    /// Deterministic transition given the seed; errors when stepping a
    /// terminal episode or on out-of-space actions.
    fn step(&mut self, action: &Value) -> EnvResult<(Value, f64, bool)>;
}

/// Environment selection by name plus parameters, as found in configs.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvSpec {
    Gridworld {
        #[serde(default = "default_grid")]
        size: usize,
        #[serde(default = "default_grid_limit")]
        max_steps: usize,
    },
    Cartpole {
        #[serde(default = "default_pole_limit")]
        max_steps: usize,
    },
}

fn default_grid() -> usize {
    4
}

fn default_grid_limit() -> usize {
    50
}

fn default_pole_limit() -> usize {
    200
}

impl EnvSpec {
    pub fn build(&self, seed: u64) -> Box<dyn Environment> {
        match self {
            EnvSpec::Gridworld { size, max_steps } => {
                Box::new(gridworld::GridWorld::new(*size, *max_steps))
            }
            EnvSpec::Cartpole { max_steps } => Box::new(cartpole::CartPole::new(seed, *max_steps)),
        }
    }

    /// Best possible undiscounted episode return (used as a learning target).
    pub fn optimal_return(&self) -> f64 {
        match self {
            EnvSpec::Gridworld { .. } => 1.0,
            EnvSpec::Cartpole { max_steps } => *max_steps as f64,
        }
    }
}
