//! Centralized actor-learner execution.
//!
//! Workers each own an act-only agent copy and a vector of environments:
//! they act in batch, assemble n-step records locally, and send fixed-length
//! fragments round-robin across the shard queues (bounded channels; a full
//! queue blocks the worker). The learner role owns the replay shards: it
//! drains insert messages, samples shards round-robin, updates its agent,
//! pushes |td| priorities back (stale slots dropped), and publishes full
//! weight snapshots with a monotone version every sync interval. Workers
//! adopt fresh snapshots between fragments. A shared frame counter ends the
//! run at the step budget.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{Receiver, SyncSender, TryRecvError};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rlstage_agents::{
    stack_records, Agent, AgentConfig, AgentError, AgentMode, EpisodeBuffer, ExternalBatch,
    NStepRecord, StepEntry,
};
use rlstage_core::{Tensor, Value};
use rlstage_envs::{EnvSpec, VectorEnv};
use rlstage_graph::BackendMode;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::shard::ReplayShard;

#[derive(Error, Debug)]
pub enum RunnerError {
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Graph(#[from] rlstage_graph::GraphError),
    #[error("config: {0}")]
    Config(String),
    #[error("worker panicked")]
    WorkerPanicked,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunnerConfig {
    #[serde(default = "one")]
    pub workers: usize,
    #[serde(default = "four")]
    pub envs_per_worker: usize,
    #[serde(default = "two")]
    pub replay_shards: usize,
    #[serde(default = "fragment")]
    pub fragment_length: usize,
    /// Learner updates between weight publications.
    #[serde(default = "sync_every")]
    pub weight_sync_interval: u64,
    /// Minimum records per shard before sampling starts.
    #[serde(default = "learn_start")]
    pub learn_start: usize,
    pub step_budget: u64,
    /// Stop early once the windowed mean return reaches this value.
    #[serde(default)]
    pub target_return: Option<f64>,
    #[serde(default = "window")]
    pub return_window: usize,
}

fn one() -> usize {
    1
}
fn two() -> usize {
    2
}
fn four() -> usize {
    4
}
fn fragment() -> usize {
    50
}
fn sync_every() -> u64 {
    10
}
fn learn_start() -> usize {
    100
}
fn window() -> usize {
    50
}

impl RunnerConfig {
    pub fn validate(&self) -> Result<(), RunnerError> {
        let check = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(RunnerError::Config(what.to_string()))
            }
        };
        check(self.workers >= 1, "workers must be positive")?;
        check(self.envs_per_worker >= 1, "envs_per_worker must be positive")?;
        check(self.replay_shards >= 1, "replay_shards must be positive")?;
        check(self.fragment_length >= 1, "fragment_length must be positive")?;
        check(self.weight_sync_interval >= 1, "weight_sync_interval must be positive")?;
        check(self.learn_start >= 1, "learn_start must be positive")?;
        check(self.step_budget >= 1, "step_budget must be positive")?;
        Ok(())
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunMetrics {
    pub frames_total: u64,
    pub elapsed_seconds: f64,
    pub env_frames_per_second: f64,
    pub produced_per_worker: Vec<u64>,
    pub inserted_per_shard: Vec<u64>,
    pub learner_updates: u64,
    pub updates_per_second: f64,
    pub last_loss: f64,
    pub worker_weight_versions: Vec<u64>,
    pub learner_weight_version: u64,
    pub worker_versions_monotone: bool,
    pub episode_returns: Vec<f64>,
    pub mean_return_last_window: f64,
    pub reached_target_at: Option<u64>,
    pub stale_priority_drops: u64,
    /// Lines of `t_seconds,frames_total,fps,updates,loss,mean_return`.
    pub metric_lines: Vec<String>,
}

struct Fragment {
    worker: usize,
    records: Value,
    count: u64,
    priorities: Option<Vec<f64>>,
}

/// Versioned full-snapshot weight publication.
struct WeightBoard {
    inner: Mutex<(u64, Arc<Vec<(String, Tensor)>>)>,
}

impl WeightBoard {
    fn new() -> WeightBoard {
        WeightBoard { inner: Mutex::new((0, Arc::new(Vec::new()))) }
    }

    fn publish(&self, version: u64, weights: Vec<(String, Tensor)>) {
        *self.inner.lock().unwrap() = (version, Arc::new(weights));
    }

    fn fetch_newer(&self, have: u64) -> Option<(u64, Arc<Vec<(String, Tensor)>>)> {
        let guard = self.inner.lock().unwrap();
        if guard.0 > have {
            Some((guard.0, guard.1.clone()))
        } else {
            None
        }
    }

    fn version(&self) -> u64 {
        self.inner.lock().unwrap().0
    }
}

struct WorkerReport {
    produced: u64,
    weight_version: u64,
    versions_monotone: bool,
}

struct Shared {
    frames: AtomicU64,
    stop: AtomicBool,
    board: WeightBoard,
    episodes: Mutex<Vec<f64>>,
}

fn window_mean(returns: &[f64], window: usize) -> f64 {
    if returns.is_empty() {
        return f64::NAN;
    }
    let tail = &returns[returns.len().saturating_sub(window)..];
    tail.iter().sum::<f64>() / tail.len() as f64
}

#[allow(clippy::too_many_arguments)]
fn worker_loop(
    worker_id: usize,
    agent_cfg: &AgentConfig,
    env_spec: &EnvSpec,
    runner: &RunnerConfig,
    senders: Vec<SyncSender<Fragment>>,
    shared: &Shared,
) -> Result<WorkerReport, AgentError> {
    let mut cfg = agent_cfg.clone();
    cfg.seed = agent_cfg.seed.wrapping_add(1_000 + worker_id as u64);
    let mut agent = Agent::build_with(&cfg, AgentMode::ActOnly, BackendMode::Staged)?;
    let mut venv = VectorEnv::new(
        (0..runner.envs_per_worker)
            .map(|i| env_spec.build(cfg.seed.wrapping_add(31 * i as u64)))
            .collect(),
    );
    let k = venv.len() as u64;
    let n = cfg.update.n_step;
    let gamma = cfg.update.gamma;
    let gamma_n = gamma.powi(n as i32);

    let mut buffers: Vec<EpisodeBuffer> = (0..venv.len()).map(|_| EpisodeBuffer::default()).collect();
    let mut ready: Vec<NStepRecord> = Vec::new();
    let mut produced = 0u64;
    let mut local_steps = 0u64;
    let mut weight_version = 0u64;
    let mut versions_monotone = true;
    let mut next_shard = worker_id; // spread first fragments across shards

    let mut send_fragment = |records: &mut Vec<NStepRecord>,
                             agent: &mut Agent,
                             next_shard: &mut usize|
     -> Result<(), AgentError> {
        if records.is_empty() {
            return Ok(());
        }
        let batch = stack_records(records)?;
        let count = records.len() as u64;
        let priorities = if agent.config.worker_td_priority {
            Some(worker_priorities(agent, records, gamma_n)?)
        } else {
            None
        };
        records.clear();
        let fragment = Fragment { worker: worker_id, records: batch, count, priorities };
        if senders[*next_shard % senders.len()].send(fragment).is_err() {
            return Ok(()); // learner gone; shutting down
        }
        *next_shard += 1;
        produced += count;
        Ok(())
    };

    let mut states = venv.states().map_err(|e| AgentError::Invalid(e.to_string()))?;
    loop {
        if shared.stop.load(Ordering::Relaxed) {
            break;
        }
        let base = shared.frames.fetch_add(k, Ordering::Relaxed);
        if base >= runner.step_budget {
            shared.frames.fetch_sub(k, Ordering::Relaxed);
            break;
        }
        let eps = cfg.epsilon_at(local_steps);
        let actions = agent.act_with_epsilon(&states, eps, true)?;
        let (next_states, rewards, terminals, finished) =
            venv.step(&actions).map_err(|e| AgentError::Invalid(e.to_string()))?;
        for i in 0..venv.len() {
            let entry = StepEntry {
                state: states.row(i)?,
                action: actions.row(i)?,
                reward: rewards[i],
                terminal: terminals[i],
            };
            ready.extend(buffers[i].push(entry, n, gamma));
        }
        local_steps += k;
        states = next_states;
        if !finished.is_empty() {
            let mut sink = shared.episodes.lock().unwrap();
            for f in &finished {
                sink.push(f.episode_return);
            }
        }
        if ready.len() >= runner.fragment_length {
            send_fragment(&mut ready, &mut agent, &mut next_shard)?;
            if let Some((v, snapshot)) = shared.board.fetch_newer(weight_version) {
                if v < weight_version {
                    versions_monotone = false;
                }
                weight_version = v;
                agent.set_weights(&snapshot)?;
            }
        }
    }
    // Budget exhausted: flush incomplete horizons, bootstrapping from the
    // environments' current states, so every step becomes exactly one record.
    for (i, buffer) in buffers.iter_mut().enumerate() {
        let fs = states.row(i)?;
        ready.extend(buffer.flush_truncated(n, gamma, Some(&fs)));
    }
    send_fragment(&mut ready, &mut agent, &mut next_shard)?;
    Ok(WorkerReport { produced, weight_version, versions_monotone })
}

/// Worker-side TD-error estimates for fresh records (the optional
/// alternative to max-priority inserts).
fn worker_priorities(
    agent: &mut Agent,
    records: &[NStepRecord],
    gamma_n: f64,
) -> Result<Vec<f64>, AgentError> {
    let states: Vec<&Value> = records.iter().map(|r| &r.state).collect();
    let nexts: Vec<&Value> = records.iter().map(|r| &r.next_state).collect();
    let q_s = agent.get_q(&Value::stack(&states)?)?;
    let q_n = agent.get_q(&Value::stack(&nexts)?)?;
    let q_s = q_s.as_leaf()?;
    let q_n = q_n.as_leaf()?;
    let actions_per_row = q_s.shape()[1];
    let qs = q_s.as_f64()?;
    let qn = q_n.as_f64()?;
    let mut out = Vec::with_capacity(records.len());
    for (row, r) in records.iter().enumerate() {
        let a = r.action.as_leaf()?.scalar_as_i64()? as usize;
        let q_taken = qs[row * actions_per_row + a];
        let bootstrap = if r.terminal {
            0.0
        } else {
            qn[row * actions_per_row..(row + 1) * actions_per_row]
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max)
        };
        out.push((r.reward + gamma_n * bootstrap - q_taken).abs());
    }
    Ok(out)
}

/// Run the full pipeline to the step budget (or early target) and report
/// metrics.
pub fn run(
    agent_cfg: &AgentConfig,
    env_spec: &EnvSpec,
    runner: &RunnerConfig,
) -> Result<RunMetrics, RunnerError> {
    runner.validate()?;
    agent_cfg.validate().map_err(AgentError::Config)?;

    let shared = Shared {
        frames: AtomicU64::new(0),
        stop: AtomicBool::new(false),
        board: WeightBoard::new(),
        episodes: Mutex::new(Vec::new()),
    };

    let mut senders: Vec<Vec<SyncSender<Fragment>>> =
        (0..runner.workers).map(|_| Vec::new()).collect();
    let mut receivers: Vec<Receiver<Fragment>> = Vec::new();
    for _ in 0..runner.replay_shards {
        // Small bound: workers block once the learner falls two fragments
        // behind per shard.
        let (tx, rx) = std::sync::mpsc::sync_channel::<Fragment>(2);
        receivers.push(rx);
        for w in senders.iter_mut() {
            w.push(tx.clone());
        }
    }

    let mut learner =
        Agent::build_with(agent_cfg, AgentMode::Learner, BackendMode::Staged).map_err(RunnerError::Agent)?;
    let mut shards: Vec<ReplayShard> = (0..runner.replay_shards)
        .map(|i| ReplayShard::new(agent_cfg, agent_cfg.seed.wrapping_add(777 + i as u64)))
        .collect::<Result<_, _>>()?;

    // Initial weights at version 1 so workers never act on garbage.
    shared.board.publish(1, learner.get_weights());

    let started = Instant::now();
    let metrics = std::thread::scope(|scope| -> Result<RunMetrics, RunnerError> {
        let mut handles = Vec::new();
        for (worker_id, worker_senders) in senders.into_iter().enumerate() {
            let shared_ref = &shared;
            handles.push(scope.spawn(move || {
                worker_loop(worker_id, agent_cfg, env_spec, runner, worker_senders, shared_ref)
            }));
        }

        // Learner loop on this thread. Each iteration accepts at most one
        // fragment per shard before updating, so full queues throttle the
        // workers (backpressure couples the replay ratio to learner speed).
        let mut open = vec![true; receivers.len()];
        let mut updates = 0u64;
        let mut last_loss = f64::NAN;
        let mut published_version = 1u64;
        let mut next_shard = 0usize;
        let mut reached_target_at = None;
        let mut metric_lines = Vec::new();
        let mut next_log = 0.5f64;
        loop {
            let mut progressed = false;
            for (i, rx) in receivers.iter().enumerate() {
                if !open[i] {
                    continue;
                }
                match rx.try_recv() {
                    Ok(fragment) => {
                        let _ = fragment.worker;
                        debug_assert_eq!(
                            fragment.count,
                            fragment.records.batch_len().unwrap_or(0) as u64
                        );
                        shards[i]
                            .insert(fragment.records, fragment.priorities)
                            .map_err(RunnerError::Graph)?;
                        progressed = true;
                    }
                    Err(TryRecvError::Empty) => {}
                    Err(TryRecvError::Disconnected) => {
                        open[i] = false;
                    }
                }
            }

            // One update from the next shard holding enough records.
            let mut did_update = false;
            for offset in 0..shards.len() {
                let s = (next_shard + offset) % shards.len();
                if shards[s].size() >= runner.learn_start {
                    let sample = shards[s]
                        .sample(agent_cfg.update.batch_size)
                        .map_err(RunnerError::Graph)?;
                    let (loss, td) = learner
                        .update_external(ExternalBatch {
                            records: sample.records,
                            weights: Some(sample.weights),
                        })
                        .map_err(RunnerError::Agent)?;
                    shards[s]
                        .update_priorities(
                            &sample.indices,
                            &sample.versions,
                            td.as_f64().map_err(rlstage_graph::GraphError::Core)?,
                        )
                        .map_err(RunnerError::Graph)?;
                    last_loss = loss;
                    updates += 1;
                    if updates % runner.weight_sync_interval == 0 {
                        published_version += 1;
                        shared.board.publish(published_version, learner.get_weights());
                    }
                    next_shard = (s + 1) % shards.len();
                    did_update = true;
                    break;
                }
            }

            if let Some(target) = runner.target_return {
                if reached_target_at.is_none() {
                    let episodes = shared.episodes.lock().unwrap();
                    if episodes.len() >= runner.return_window.min(10)
                        && window_mean(&episodes, runner.return_window) >= target
                    {
                        reached_target_at = Some(shared.frames.load(Ordering::Relaxed));
                        shared.stop.store(true, Ordering::Relaxed);
                    }
                }
            }

            let elapsed = started.elapsed().as_secs_f64();
            if elapsed >= next_log {
                let frames = shared.frames.load(Ordering::Relaxed).min(runner.step_budget);
                let episodes = shared.episodes.lock().unwrap();
                metric_lines.push(rlstage_agents::trainer::format_metric_line(
                    elapsed,
                    frames,
                    updates,
                    last_loss,
                    window_mean(&episodes, runner.return_window),
                ));
                next_log += 0.5;
            }

            // Workers done and queues drained: the run is over (pending
            // updates beyond the budget are not performed).
            if !progressed && open.iter().all(|o| !o) {
                break;
            }
            if !progressed && !did_update {
                std::thread::park_timeout(std::time::Duration::from_micros(200));
            }
        }

        let mut produced_per_worker = Vec::new();
        let mut worker_weight_versions = Vec::new();
        let mut monotone = true;
        for h in handles {
            let report = h.join().map_err(|_| RunnerError::WorkerPanicked)??;
            produced_per_worker.push(report.produced);
            worker_weight_versions.push(report.weight_version);
            monotone &= report.versions_monotone;
        }

        let elapsed = started.elapsed().as_secs_f64();
        let frames_total: u64 = produced_per_worker.iter().sum();
        let episode_returns = shared.episodes.lock().unwrap().clone();
        let mean_return = window_mean(&episode_returns, runner.return_window);
        metric_lines.push(rlstage_agents::trainer::format_metric_line(
            elapsed,
            frames_total,
            updates,
            last_loss,
            mean_return,
        ));
        let learner_version = shared.board.version();
        for v in &worker_weight_versions {
            monotone &= *v <= learner_version;
        }
        Ok(RunMetrics {
            frames_total,
            elapsed_seconds: elapsed,
            env_frames_per_second: frames_total as f64 / elapsed.max(1e-9),
            produced_per_worker,
            inserted_per_shard: shards.iter().map(|s| s.received_records).collect(),
            learner_updates: updates,
            updates_per_second: updates as f64 / elapsed.max(1e-9),
            last_loss,
            worker_weight_versions,
            learner_weight_version: learner_version,
            worker_versions_monotone: monotone,
            mean_return_last_window: mean_return,
            episode_returns,
            reached_target_at,
            stale_priority_drops: shards.iter().map(|s| s.stale_drops).sum(),
            metric_lines,
        })
    })?;

    Ok(metrics)
}
