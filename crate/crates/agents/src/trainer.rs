//! Single-process training loop over a vectorized environment.

use std::time::Instant;

use rlstage_core::Value;
use rlstage_envs::{EnvSpec, VectorEnv};
use rlstage_graph::BackendMode;
use serde::{Deserialize, Serialize};

use crate::agent::{Agent, AgentError};
use crate::compose::AgentMode;
use crate::config::AgentConfig;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "default_steps")]
    pub total_steps: u64,
    #[serde(default = "default_envs")]
    pub vector_envs: usize,
    /// Minimum stored records before updates start (batch size by default).
    #[serde(default)]
    pub learn_start: Option<usize>,
    #[serde(default = "default_window")]
    pub return_window: usize,
    /// Stop once the windowed mean return reaches this value.
    #[serde(default)]
    pub target_return: Option<f64>,
    #[serde(default = "default_log")]
    pub log_every_frames: u64,
}

fn default_steps() -> u64 {
    30_000
}

fn default_envs() -> usize {
    1
}

fn default_window() -> usize {
    50
}

fn default_log() -> u64 {
    1_000
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            total_steps: default_steps(),
            vector_envs: default_envs(),
            learn_start: None,
            return_window: default_window(),
            target_return: None,
            log_every_frames: default_log(),
        }
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub frames: u64,
    pub updates: u64,
    pub episode_returns: Vec<f64>,
    pub final_mean_return: f64,
    /// Frame count at which the windowed mean first reached the target.
    pub reached_target_at: Option<u64>,
    pub last_loss: f64,
    /// Lines of `t_seconds,frames_total,fps,updates,loss,mean_return`.
    pub metric_lines: Vec<String>,
}

fn window_mean(returns: &[f64], window: usize) -> f64 {
    if returns.is_empty() {
        return f64::NAN;
    }
    let tail = &returns[returns.len().saturating_sub(window)..];
    tail.iter().sum::<f64>() / tail.len() as f64
}

/// Train a fresh agent against the named environment; stops at the step
/// budget or when the windowed mean return reaches the target.
pub fn train(
    agent_cfg: &AgentConfig,
    env_spec: &EnvSpec,
    section: &TrainSection,
    backend: BackendMode,
    seed: u64,
) -> Result<TrainOutcome, AgentError> {
    let mut cfg = agent_cfg.clone();
    cfg.seed = seed;
    let mut agent = Agent::build_with(&cfg, AgentMode::Full, backend)?;
    let mut venv = VectorEnv::new(
        (0..section.vector_envs.max(1))
            .map(|i| env_spec.build(seed.wrapping_add(i as u64)))
            .collect(),
    );
    let learn_start = section.learn_start.unwrap_or(cfg.update.batch_size).max(1);

    let started = Instant::now();
    let mut frames: u64 = 0;
    let mut next_update_at = learn_start as u64;
    let mut next_log_at = section.log_every_frames;
    let mut last_loss = f64::NAN;
    let mut episode_returns = Vec::new();
    let mut reached_target_at = None;
    let mut metric_lines = Vec::new();

    let mut states = venv.states().map_err(|e| AgentError::Invalid(e.to_string()))?;
    while frames < section.total_steps {
        let actions = agent.get_actions(&states, true, true)?;
        let (next_states, rewards, terminals, finished) =
            venv.step(&actions).map_err(|e| AgentError::Invalid(e.to_string()))?;
        for i in 0..venv.len() {
            agent.observe(
                states.row(i)?,
                actions.row(i)?,
                rewards[i],
                terminals[i],
                &format!("env{}", i),
            )?;
        }
        frames += venv.len() as u64;
        states = next_states;

        for f in &finished {
            episode_returns.push(f.episode_return);
        }
        if let Some(target) = section.target_return {
            if reached_target_at.is_none()
                && episode_returns.len() >= section.return_window.min(10)
                && window_mean(&episode_returns, section.return_window) >= target
            {
                reached_target_at = Some(frames);
            }
        }

        while frames >= next_update_at && agent.memory_size()? >= learn_start {
            last_loss = agent.update(None, None)?;
            next_update_at += cfg.update.update_interval;
        }

        if frames >= next_log_at {
            let elapsed = started.elapsed().as_secs_f64();
            metric_lines.push(format_metric_line(
                elapsed,
                frames,
                agent.updates(),
                last_loss,
                window_mean(&episode_returns, section.return_window),
            ));
            next_log_at += section.log_every_frames;
        }
        if reached_target_at.is_some() {
            break;
        }
    }

    let elapsed = started.elapsed().as_secs_f64();
    metric_lines.push(format_metric_line(
        elapsed,
        frames,
        agent.updates(),
        last_loss,
        window_mean(&episode_returns, section.return_window),
    ));

    Ok(TrainOutcome {
        frames,
        updates: agent.updates(),
        final_mean_return: window_mean(&episode_returns, section.return_window),
        episode_returns,
        reached_target_at,
        last_loss,
        metric_lines,
    })
}

/// `t_seconds,frames_total,fps,updates,loss,mean_return`
pub fn format_metric_line(
    t_seconds: f64,
    frames: u64,
    updates: u64,
    loss: f64,
    mean_return: f64,
) -> String {
    let fps = if t_seconds > 0.0 { frames as f64 / t_seconds } else { 0.0 };
    format!(
        "{:.3},{},{:.1},{},{:.6},{:.3}",
        t_seconds, frames, fps, updates, loss, mean_return
    )
}

/// Drive greedy evaluation episodes without observing or updating.
pub fn evaluate(
    agent: &mut Agent,
    env_spec: &EnvSpec,
    episodes: usize,
    seed: u64,
) -> Result<Vec<f64>, AgentError> {
    let mut env = env_spec.build(seed);
    let mut out = Vec::new();
    for _ in 0..episodes {
        let mut state = env.reset();
        let mut total = 0.0;
        loop {
            let batched = Value::stack(&[&state]).map_err(AgentError::Core)?;
            let actions = agent.get_actions(&batched, false, true)?;
            let action = actions.row(0)?;
            let (next, r, t) = env.step(&action).map_err(|e| AgentError::Invalid(e.to_string()))?;
            total += r;
            state = next;
            if t {
                break;
            }
        }
        out.push(total);
    }
    Ok(out)
}
