//! Desk-scale distributed execution: sample-collecting workers feeding
//! shared prioritized replay shards, a centralized learner, and periodic
//! full-snapshot weight synchronization over in-process bounded queues.

pub mod runner;
pub mod shard;

pub use runner::{run, RunMetrics, RunnerConfig, RunnerError};
pub use shard::{ReplayShard, ShardSample};
