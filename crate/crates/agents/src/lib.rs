//! High-level agents: declarative configuration, the DQN composition over
//! the component library, n-step observation buffers, checkpoints, and a
//! single-process trainer.

pub mod agent;
pub mod checkpoint;
pub mod compose;
pub mod config;
pub mod nstep;
pub mod trainer;

pub use agent::{stack_records, Agent, AgentError, AgentResult, ExternalBatch};
pub use compose::{
    apply_replica_strategy, assemble, compose_dqn, input_spaces, record_space, AgentMode,
    POLICY_SCOPE, TARGET_SCOPE,
};
pub use config::{AgentConfig, ConfigError, ExplorationConfig, MemoryConfig, UpdateConfig};
pub use nstep::{EpisodeBuffer, NStepRecord, StepEntry};
pub use trainer::{evaluate, train, TrainOutcome, TrainSection};
