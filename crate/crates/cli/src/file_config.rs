//! Top-level config files: agent, environment, training schedule, runner,
//! and/or a named library component, with `--set` dotted-path overrides
//! applied to the raw document before deserialization.

use anyhow::{bail, Context, Result};
use rlstage_agents::{AgentConfig, TrainSection};
use rlstage_envs::EnvSpec;
use rlstage_runtime::RunnerConfig;
use serde::Deserialize;

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ComponentSection {
    /// Name of a library component case (see `test-component --list`).
    pub name: String,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub agent: Option<AgentConfig>,
    #[serde(default)]
    pub env: Option<EnvSpec>,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub runner: Option<RunnerConfig>,
    #[serde(default)]
    pub component: Option<ComponentSection>,
}

impl FileConfig {
    pub fn load(path: &std::path::Path, overrides: &[String], seed: Option<u64>) -> Result<FileConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config '{}'", path.display()))?;
        let mut doc: serde_json::Value =
            serde_json::from_str(&text).context("config is not valid JSON")?;
        for entry in overrides {
            apply_override(&mut doc, entry)?;
        }
        if let Some(s) = seed {
            if let Some(agent) = doc.get_mut("agent") {
                agent["seed"] = serde_json::json!(s);
            }
        }
        let cfg: FileConfig = serde_json::from_value(doc).context("config schema")?;
        if let Some(agent) = &cfg.agent {
            agent.validate()?;
        }
        Ok(cfg)
    }

    pub fn agent(&self) -> Result<&AgentConfig> {
        self.agent.as_ref().context("config has no 'agent' section")
    }

    pub fn env(&self) -> Result<&EnvSpec> {
        self.env.as_ref().context("config has no 'env' section")
    }
}

/// Apply one `key.path=value` override. Paths resolve from the document
/// root; when the first segment is not a top-level key they resolve under
/// `agent` (so `update.batch_size=64` tunes the agent directly).
pub fn apply_override(doc: &mut serde_json::Value, entry: &str) -> Result<()> {
    let (path, raw) = entry
        .split_once('=')
        .with_context(|| format!("override '{}' is not KEY=VALUE", entry))?;
    let value: serde_json::Value = match serde_json::from_str(raw) {
        Ok(v) => v,
        Err(_) => serde_json::Value::String(raw.to_string()),
    };
    let segments: Vec<&str> = path.split('.').collect();
    if segments.is_empty() || segments.iter().any(|s| s.is_empty()) {
        bail!("override path '{}' is malformed", path);
    }
    let mut cursor: &mut serde_json::Value = {
        let root_key = segments[0];
        let top_level = doc.get(root_key).is_some();
        if top_level {
            doc
        } else {
            if !doc.is_object() {
                bail!("config root is not an object");
            }
            doc.as_object_mut()
                .unwrap()
                .entry("agent")
                .or_insert_with(|| serde_json::json!({}))
        }
    };
    for seg in &segments[..segments.len() - 1] {
        if !cursor.is_object() {
            bail!("override path '{}' walks through a non-object", path);
        }
        cursor = cursor
            .as_object_mut()
            .unwrap()
            .entry(seg.to_string())
            .or_insert_with(|| serde_json::json!({}));
    }
    if !cursor.is_object() {
        bail!("override path '{}' lands in a non-object", path);
    }
    cursor
        .as_object_mut()
        .unwrap()
        .insert(segments[segments.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_route_to_the_agent_section() {
        let mut doc = serde_json::json!({"agent": {"update": {"batch_size": 16}}});
        apply_override(&mut doc, "update.batch_size=64").unwrap();
        assert_eq!(doc["agent"]["update"]["batch_size"], 64);
        apply_override(&mut doc, "train.total_steps=500").unwrap();
        // "train" was not a top-level key yet, so it lands under agent...
        assert_eq!(doc["agent"]["train"]["total_steps"], 500);
        // ...while existing top-level keys are addressed directly.
        apply_override(&mut doc, "agent.seed=9").unwrap();
        assert_eq!(doc["agent"]["seed"], 9);
    }

    #[test]
    fn values_parse_as_json_with_string_fallback() {
        let mut doc = serde_json::json!({ "agent": {} });
        apply_override(&mut doc, "agent.agent=dqn").unwrap();
        assert_eq!(doc["agent"]["agent"], "dqn");
        apply_override(&mut doc, "agent.dueling=false").unwrap();
        assert_eq!(doc["agent"]["dueling"], false);
    }
}
