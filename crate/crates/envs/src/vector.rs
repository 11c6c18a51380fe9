//! Sequentially stepped environment vector with auto-reset.

use rlstage_core::{Space, Value};

use crate::{EnvError, EnvResult, Environment};

/// Per-episode bookkeeping emitted exactly once when an episode finishes.
#[derive(Clone, Debug, PartialEq)]
pub struct FinishedEpisode {
    pub env_index: usize,
    pub episode_return: f64,
    pub length: usize,
}

pub struct VectorEnv {
    envs: Vec<Box<dyn Environment>>,
    states: Vec<Value>,
    returns: Vec<f64>,
    lengths: Vec<usize>,
}

impl VectorEnv {
    pub fn new(mut envs: Vec<Box<dyn Environment>>) -> VectorEnv {
        assert!(!envs.is_empty(), "vector env needs at least one environment");
        let states = envs.iter_mut().map(|e| e.reset()).collect();
        let n = envs.len();
        VectorEnv { envs, states, returns: vec![0.0; n], lengths: vec![0; n] }
    }

    pub fn len(&self) -> usize {
        self.envs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envs.is_empty()
    }

    pub fn state_space(&self) -> Space {
        self.envs[0].state_space()
    }

    pub fn action_space(&self) -> Space {
        self.envs[0].action_space()
    }

    /// Current per-env states stacked along a fresh batch axis.
    pub fn states(&self) -> EnvResult<Value> {
        let refs: Vec<&Value> = self.states.iter().collect();
        Ok(Value::stack(&refs)?)
    }

    /// Step every environment with one row of the batched action value.
    /// Finished environments auto-reset; the returned state for those is
    /// the fresh reset state, alongside a true terminal flag.
    pub fn step(
        &mut self,
        actions: &Value,
    ) -> EnvResult<(Value, Vec<f64>, Vec<bool>, Vec<FinishedEpisode>)> {
        let batch = actions.batch_len()?;
        if batch != self.envs.len() {
            return Err(EnvError::InvalidAction(format!(
                "{} actions for {} environments",
                batch,
                self.envs.len()
            )));
        }
        let mut rewards = Vec::with_capacity(batch);
        let mut terminals = Vec::with_capacity(batch);
        let mut finished = Vec::new();
        for i in 0..batch {
            let action = actions.row(i)?;
            let (next, reward, terminal) = self.envs[i].step(&action)?;
            self.returns[i] += reward;
            self.lengths[i] += 1;
            rewards.push(reward);
            terminals.push(terminal);
            if terminal {
                finished.push(FinishedEpisode {
                    env_index: i,
                    episode_return: self.returns[i],
                    length: self.lengths[i],
                });
                self.returns[i] = 0.0;
                self.lengths[i] = 0;
                self.states[i] = self.envs[i].reset();
            } else {
                self.states[i] = next;
            }
        }
        Ok((self.states()?, rewards, terminals, finished))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::GridWorld;
    use rlstage_core::Tensor;

    fn venv(k: usize) -> VectorEnv {
        VectorEnv::new(
            (0..k).map(|_| Box::new(GridWorld::new(4, 50)) as Box<dyn Environment>).collect(),
        )
    }

    fn acts(v: Vec<i64>) -> Value {
        let n = v.len();
        Value::Leaf(Tensor::from_i64(vec![n], v).unwrap())
    }

    #[test]
    fn one_transition_per_subenvironment() {
        let mut v = venv(4);
        let (states, rewards, terminals, finished) = v.step(&acts(vec![1, 1, 2, 2])).unwrap();
        assert_eq!(states.as_leaf().unwrap().shape(), &[4, 16]);
        assert_eq!(rewards.len(), 4);
        assert_eq!(terminals.len(), 4);
        assert!(finished.is_empty());
    }

    #[test]
    fn finished_episodes_reported_once_and_reset() {
        let mut v = venv(2);
        // Drive env 0 straight to the goal in 6 moves; env 1 idles at walls.
        for _ in 0..3 {
            v.step(&acts(vec![1, 0])).unwrap();
        }
        for i in 0..3 {
            let (_, _, terms, fins) = v.step(&acts(vec![2, 0])).unwrap();
            if i < 2 {
                assert!(fins.is_empty());
            } else {
                assert!(terms[0]);
                assert_eq!(fins.len(), 1);
                assert_eq!(fins[0].env_index, 0);
                assert_eq!(fins[0].episode_return, 1.0);
                assert_eq!(fins[0].length, 6);
            }
        }
        // Auto-reset: the reported state for env 0 is the start state.
        let states = v.states().unwrap();
        let row0 = states.as_leaf().unwrap().row(0).unwrap();
        assert_eq!(row0.as_f64().unwrap()[0], 1.0);
    }

    #[test]
    fn batch_extent_must_match() {
        let mut v = venv(2);
        assert!(v.step(&acts(vec![0, 0, 0])).is_err());
    }
}
