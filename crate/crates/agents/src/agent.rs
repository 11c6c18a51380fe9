//! The high-level agent.
//!
//! User code interacts through this surface alone: build, get_actions,
//! observe, update, weight access, model import/export, and target sync.
//! Observations accumulate per environment id and flush into the replay
//! memory as their n-step horizons complete; updates sample from the
//! memory (or take an external batch), refresh priorities with the new
//! |td| values in-graph, and hard-sync the target network on the
//! configured interval.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use rlstage_core::{Space, Tensor, Value};
use rlstage_graph::{
    build_with, BackendMode, BuildOptions, BuildStats, ComponentGraph, GraphExecutor, OpRegistry,
};
use thiserror::Error;

use crate::checkpoint::{self, CheckpointError};
use crate::compose::{self, AgentMode, POLICY_SCOPE};
use crate::config::{AgentConfig, ConfigError};
use crate::nstep::{EpisodeBuffer, NStepRecord, StepEntry};

#[derive(Error, Debug)]
pub enum AgentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Graph(#[from] rlstage_graph::GraphError),
    #[error(transparent)]
    Core(#[from] rlstage_core::CoreError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Invalid(String),
}

pub type AgentResult<T> = std::result::Result<T, AgentError>;

/// An externally supplied update batch (bypasses the internal memory).
pub struct ExternalBatch {
    pub records: Value,
    /// Importance weights; ones when absent.
    pub weights: Option<Tensor>,
}

pub struct Agent {
    pub config: AgentConfig,
    mode: AgentMode,
    graph: ComponentGraph,
    registry: Arc<OpRegistry>,
    exec: GraphExecutor,
    stats: BuildStats,
    buffers: HashMap<String, EpisodeBuffer>,
    timestep: u64,
    updates: u64,
    memory_inserts: u64,
}

impl Agent {
    /// Full agent on the staged backend.
    pub fn build(config: &AgentConfig) -> AgentResult<Agent> {
        Agent::build_with(config, AgentMode::Full, BackendMode::Staged)
    }

    pub fn build_with(
        config: &AgentConfig,
        mode: AgentMode,
        backend: BackendMode,
    ) -> AgentResult<Agent> {
        config.validate()?;
        let spaces = compose::input_spaces(config)?;
        let mut graph = compose::assemble(config, mode)?;
        let devices = compose::device_map(config)?;
        let (registry, stats) = build_with(
            &mut graph,
            &spaces,
            &devices,
            backend,
            &BuildOptions { seed: config.seed, reverse_queue: false },
        )?;
        let registry = Arc::new(registry);
        let exec = GraphExecutor::new(registry.clone(), config.seed);
        let mut agent = Agent {
            config: config.clone(),
            mode,
            graph,
            registry,
            exec,
            stats,
            buffers: HashMap::new(),
            timestep: 0,
            updates: 0,
            memory_inserts: 0,
        };
        // Online and target networks start identical.
        if mode != AgentMode::ActOnly {
            agent.sync_target()?;
        }
        Ok(agent)
    }

    pub fn mode(&self) -> AgentMode {
        self.mode
    }

    pub fn stats(&self) -> &BuildStats {
        &self.stats
    }

    pub fn graph(&self) -> &ComponentGraph {
        &self.graph
    }

    pub fn registry(&self) -> &OpRegistry {
        &self.registry
    }

    pub fn executor(&mut self) -> &mut GraphExecutor {
        &mut self.exec
    }

    pub fn timestep(&self) -> u64 {
        self.timestep
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Current exploration rate under the linear schedule.
    pub fn epsilon(&self) -> f64 {
        self.config.epsilon_at(self.timestep)
    }

    pub fn state_space(&self) -> AgentResult<Space> {
        Ok(self.config.state_space.build()?.with_batch_rank(true))
    }

    /// Batched action selection. `explore` draws epsilon-greedy actions
    /// under the schedule; `preprocess` routes states through the
    /// preprocessor stack.
    pub fn get_actions(
        &mut self,
        states: &Value,
        explore: bool,
        preprocess: bool,
    ) -> AgentResult<Value> {
        let api = match (explore, preprocess) {
            (true, true) => "act",
            (true, false) => "act_raw",
            (false, true) => "act_greedy",
            (false, false) => "act_greedy_raw",
        };
        let mut args = vec![states.clone()];
        if explore {
            args.push(Value::Leaf(Tensor::scalar_f64(self.epsilon())));
        }
        let mut out = self.exec.execute(api, &args)?;
        Ok(out.remove(0))
    }

    /// Epsilon-greedy acting under an externally supplied rate (sample
    /// collectors own their schedules).
    pub fn act_with_epsilon(
        &mut self,
        states: &Value,
        epsilon: f64,
        preprocess: bool,
    ) -> AgentResult<Value> {
        let api = if preprocess { "act" } else { "act_raw" };
        let mut out = self
            .exec
            .execute(api, &[states.clone(), Value::Leaf(Tensor::scalar_f64(epsilon))])?;
        Ok(out.remove(0))
    }

    /// Action values for a batch of states (preprocessed path).
    pub fn get_q(&mut self, states: &Value) -> AgentResult<Value> {
        let mut out = self.exec.execute("get_q", &[states.clone()])?;
        Ok(out.remove(0))
    }

    /// Record one transition for a named environment. Completed n-step
    /// records are inserted into the memory immediately; returns how many.
    pub fn observe(
        &mut self,
        state: Value,
        action: Value,
        reward: f64,
        terminal: bool,
        env_id: &str,
    ) -> AgentResult<usize> {
        self.timestep += 1;
        let n = self.config.update.n_step;
        let gamma = self.config.update.gamma;
        let buffer = self.buffers.entry(env_id.to_string()).or_default();
        let records = buffer.push(StepEntry { state, action, reward, terminal }, n, gamma);
        self.insert_records(&records)
    }

    /// Drain incomplete fragments (budget/fragment boundaries), optionally
    /// bootstrapping from the environments' current states.
    pub fn flush_observations(
        &mut self,
        final_states: &HashMap<String, Value>,
    ) -> AgentResult<usize> {
        let n = self.config.update.n_step;
        let gamma = self.config.update.gamma;
        let mut all = Vec::new();
        for (env_id, buffer) in self.buffers.iter_mut() {
            all.extend(buffer.flush_truncated(n, gamma, final_states.get(env_id)));
        }
        self.insert_records(&all)
    }

    fn insert_records(&mut self, records: &[NStepRecord]) -> AgentResult<usize> {
        if records.is_empty() {
            return Ok(0);
        }
        let batch = stack_records(records)?;
        self.exec.execute("insert", &[batch])?;
        self.memory_inserts += records.len() as u64;
        Ok(records.len())
    }

    pub fn memory_size(&self) -> AgentResult<usize> {
        let size = self.exec.read_variable("/agent/memory/size")?;
        Ok(size.scalar_as_i64()? as usize)
    }

    pub fn memory_inserts(&self) -> u64 {
        self.memory_inserts
    }

    /// One training step from the internal memory (`batch = None`) or an
    /// external batch. Returns the scalar loss. `sequence_indices` is
    /// accepted for interface compatibility and ignored (reserved).
    pub fn update(
        &mut self,
        batch: Option<ExternalBatch>,
        _sequence_indices: Option<Vec<usize>>,
    ) -> AgentResult<f64> {
        let loss = match batch {
            None => {
                let n = Value::Leaf(Tensor::scalar_i64(self.config.update.batch_size as i64));
                let out = self.exec.execute("update_from_memory", &[n])?;
                out[0].as_leaf()?.scalar_as_f64()?
            }
            Some(external) => self.update_external(external)?.0,
        };
        self.updates += 1;
        if self.updates % self.config.update.target_sync_interval == 0 {
            self.sync_target()?;
        }
        Ok(loss)
    }

    /// External-batch update returning (loss, per-sample |td|) so callers
    /// that own replay state can push priorities back.
    pub fn update_external(&mut self, batch: ExternalBatch) -> AgentResult<(f64, Tensor)> {
        let rows = batch.records.batch_len()?;
        let weights = match batch.weights {
            Some(w) => w,
            None => Tensor::full_f64(vec![rows], 1.0),
        };
        let out = self
            .exec
            .execute("update_from_batch", &[batch.records, Value::Leaf(weights)])?;
        let loss = out[0].as_leaf()?.scalar_as_f64()?;
        let td = out[1].as_leaf()?.clone();
        self.updates += 1;
        if self.updates % self.config.update.target_sync_interval == 0 {
            self.sync_target()?;
        }
        Ok((loss, td))
    }

    /// Hard-copy the online network into the target network.
    pub fn sync_target(&mut self) -> AgentResult<()> {
        self.exec.execute("sync_target", &[])?;
        Ok(())
    }

    /// Copies of the online policy variables.
    pub fn get_weights(&self) -> Vec<(String, Tensor)> {
        self.exec.read_variables(POLICY_SCOPE)
    }

    pub fn set_weights(&mut self, weights: &[(String, Tensor)]) -> AgentResult<()> {
        self.exec.write_variables(weights)?;
        Ok(())
    }

    /// Serialize the complete variable store.
    pub fn export_model(&self, path: &Path) -> AgentResult<()> {
        let vars = self.exec.read_variables("/");
        std::fs::write(path, checkpoint::encode(&vars))?;
        Ok(())
    }

    /// Restore a checkpoint into an identically configured agent. The
    /// variable sets must match exactly.
    pub fn import_model(&mut self, path: &Path) -> AgentResult<()> {
        let text = std::fs::read_to_string(path)?;
        let vars = checkpoint::decode(&text)?;
        let mut expected: Vec<String> = self.exec.variable_names();
        expected.sort();
        let mut given: Vec<String> = vars.iter().map(|(n, _)| n.clone()).collect();
        given.sort();
        if expected != given {
            return Err(CheckpointError::VariableSetMismatch(format!(
                "checkpoint holds {} variables, agent expects {}",
                given.len(),
                expected.len()
            ))
            .into());
        }
        self.exec.write_variables(&vars)?;
        Ok(())
    }
}

/// Stack n-step records into one batched record value.
pub fn stack_records(records: &[NStepRecord]) -> AgentResult<Value> {
    let rows: Vec<Value> = records
        .iter()
        .map(|r| {
            Value::dict(vec![
                ("action", r.action.clone()),
                ("next_state", r.next_state.clone()),
                ("reward", Value::Leaf(Tensor::scalar_f64(r.reward))),
                ("state", r.state.clone()),
                ("terminal", Value::Leaf(Tensor::scalar_bool(r.terminal))),
            ])
        })
        .collect();
    let refs: Vec<&Value> = rows.iter().collect();
    Ok(Value::stack(&refs)?)
}
