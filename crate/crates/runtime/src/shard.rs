//! A replay shard: one standalone prioritized memory component with its own
//! executor, owned by the learner and fed by worker messages.
//!
//! The shard mirrors ring-slot write generations so priority updates for
//! slots that were overwritten between sampling and the update are silently
//! dropped (ring eviction makes them meaningless).

use std::sync::Arc;

use indexmap::IndexMap;
use rlstage_agents::{record_space, AgentConfig};
use rlstage_components::{next_pow2, prioritized_replay, PrioritizedReplayConfig};
use rlstage_core::{Space, Tensor, Value};
use rlstage_graph::{
    build, build_meta_graph, BackendMode, DeviceMap, GraphExecutor, GraphResult,
};

pub struct ReplayShard {
    exec: GraphExecutor,
    capacity: usize,
    /// Monotone insert counter; slot versions derive from it.
    total_inserted: u64,
    slot_version: Vec<u64>,
    pub received_records: u64,
    pub stale_drops: u64,
}

pub struct ShardSample {
    pub records: Value,
    pub indices: Vec<i64>,
    pub weights: Tensor,
    /// Write generation of each sampled slot at sampling time.
    pub versions: Vec<u64>,
}

impl ReplayShard {
    pub fn new(cfg: &AgentConfig, shard_seed: u64) -> GraphResult<ReplayShard> {
        let records = record_space(cfg)?;
        let memory = prioritized_replay(
            "memory",
            PrioritizedReplayConfig {
                capacity: cfg.memory.capacity,
                alpha: cfg.memory.alpha,
                beta: cfg.memory.beta,
                priority_floor: 1e-6,
            },
        );
        let mut spaces: IndexMap<String, Space> = IndexMap::new();
        spaces.insert("records".into(), records);
        spaces.insert("n".into(), Space::int_box_unbounded(&[]));
        spaces.insert("indices".into(), Space::int_box_unbounded(&[]).with_batch_rank(true));
        spaces.insert("abs_errors".into(), Space::float_box(&[]).with_batch_rank(true));
        let mut graph = build_meta_graph(memory, &spaces)?;
        let (registry, _) = build(&mut graph, &spaces, &DeviceMap::default(), BackendMode::Staged)?;
        let _ = next_pow2(cfg.memory.capacity);
        Ok(ReplayShard {
            exec: GraphExecutor::new(Arc::new(registry), shard_seed),
            capacity: cfg.memory.capacity,
            total_inserted: 0,
            slot_version: vec![0; cfg.memory.capacity],
            received_records: 0,
            stale_drops: 0,
        })
    }

    pub fn size(&self) -> usize {
        self.exec
            .read_variable("/memory/size")
            .and_then(|t| t.scalar_as_i64().map_err(Into::into))
            .unwrap_or(0) as usize
    }

    /// Insert a batch; `priorities` carries worker-computed |td| estimates
    /// when worker-side prioritization is on.
    pub fn insert(&mut self, records: Value, priorities: Option<Vec<f64>>) -> GraphResult<()> {
        let rows = records.batch_len()? as u64;
        self.exec.execute("insert_records", &[records])?;
        // Mirror the ring-slot writes.
        let base = self.total_inserted;
        let mut written = Vec::with_capacity(rows as usize);
        for i in 0..rows {
            let slot = ((base + i) % self.capacity as u64) as usize;
            self.slot_version[slot] = base + i + 1;
            written.push(slot as i64);
        }
        self.total_inserted = base + rows;
        self.received_records += rows;
        if let Some(p) = priorities {
            let n = written.len();
            self.exec.execute(
                "update_priorities",
                &[
                    Value::Leaf(Tensor::from_i64(vec![n], written)?),
                    Value::Leaf(Tensor::from_f64(vec![n], p)?),
                ],
            )?;
        }
        Ok(())
    }

    pub fn sample(&mut self, n: usize) -> GraphResult<ShardSample> {
        let out = self.exec.execute("sample", &[Value::Leaf(Tensor::scalar_i64(n as i64))])?;
        let indices = out[1].as_leaf()?.as_i64()?.to_vec();
        let versions = indices.iter().map(|i| self.slot_version[*i as usize]).collect();
        Ok(ShardSample {
            records: out[0].clone(),
            indices,
            weights: out[2].as_leaf()?.clone(),
            versions,
        })
    }

    /// Apply |td| priorities for sampled slots, dropping entries whose slot
    /// was rewritten since sampling.
    pub fn update_priorities(
        &mut self,
        indices: &[i64],
        versions: &[u64],
        abs_errors: &[f64],
    ) -> GraphResult<()> {
        let mut live_idx = Vec::new();
        let mut live_err = Vec::new();
        for ((i, v), e) in indices.iter().zip(versions).zip(abs_errors) {
            if self.slot_version[*i as usize] == *v {
                live_idx.push(*i);
                live_err.push(*e);
            } else {
                self.stale_drops += 1;
            }
        }
        if live_idx.is_empty() {
            return Ok(());
        }
        let n = live_idx.len();
        self.exec.execute(
            "update_priorities",
            &[
                Value::Leaf(Tensor::from_i64(vec![n], live_idx)?),
                Value::Leaf(Tensor::from_f64(vec![n], live_err)?),
            ],
        )?;
        Ok(())
    }

    /// Leaf mass of one slot (tests).
    pub fn priority_mass(&self, slot: usize) -> GraphResult<f64> {
        let tree = self.exec.read_variable("/memory/segment-tree/sum_tree")?;
        let leaves = tree.as_f64()?;
        Ok(leaves[leaves.len() / 2 + slot])
    }
}
