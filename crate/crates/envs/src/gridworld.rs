//! Deterministic grid: start at the top-left, goal at the bottom-right.
//! Step reward 0, goal reward 1 (terminal), episodes truncate at the step
//! limit. States are one-hot position vectors; actions are
//! {up, right, down, left} with walls clamping.

use rlstage_core::{Space, Tensor, Value};

use crate::{EnvError, EnvResult, Environment};

pub struct GridWorld {
    size: usize,
    max_steps: usize,
    row: usize,
    col: usize,
    steps: usize,
    needs_reset: bool,
}

impl GridWorld {
    pub fn new(size: usize, max_steps: usize) -> GridWorld {
        GridWorld { size, max_steps, row: 0, col: 0, steps: 0, needs_reset: false }
    }

    fn observe(&self) -> Value {
        let n = self.size * self.size;
        let mut data = vec![0.0; n];
        data[self.row * self.size + self.col] = 1.0;
        Value::Leaf(Tensor::from_f64(vec![n], data).unwrap())
    }

    /// Moves to reach the goal from the start (shortest path).
    pub fn shortest_path_len(&self) -> usize {
        2 * (self.size - 1)
    }
}

impl Environment for GridWorld {
    fn state_space(&self) -> Space {
        Space::float_box_bounded(&[self.size * self.size], 0.0, 1.0).with_batch_rank(true)
    }

    fn action_space(&self) -> Space {
        Space::int_box(4).with_batch_rank(true)
    }

    fn reset(&mut self) -> Value {
        self.row = 0;
        self.col = 0;
        self.steps = 0;
        self.needs_reset = false;
        self.observe()
    }

    fn step(&mut self, action: &Value) -> EnvResult<(Value, f64, bool)> {
        if self.needs_reset {
            return Err(EnvError::SteppedTerminal);
        }
        let a = action.as_leaf()?.scalar_as_i64()?;
        if !(0..4).contains(&a) {
            return Err(EnvError::InvalidAction(format!("grid action {} outside 0..4", a)));
        }
        match a {
            0 => self.row = self.row.saturating_sub(1),
            1 => self.col = (self.col + 1).min(self.size - 1),
            2 => self.row = (self.row + 1).min(self.size - 1),
            _ => self.col = self.col.saturating_sub(1),
        }
        self.steps += 1;
        let at_goal = self.row == self.size - 1 && self.col == self.size - 1;
        let reward = if at_goal { 1.0 } else { 0.0 };
        let terminal = at_goal || self.steps >= self.max_steps;
        self.needs_reset = terminal;
        Ok((self.observe(), reward, terminal))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn act(v: i64) -> Value {
        Value::Leaf(Tensor::scalar_i64(v))
    }

    #[test]
    fn hand_traced_transitions() {
        let mut env = GridWorld::new(4, 50);
        let s0 = env.reset();
        assert_eq!(s0.as_leaf().unwrap().as_f64().unwrap()[0], 1.0);
        // right from (0,0) -> (0,1), reward 0
        let (s1, r, t) = env.step(&act(1)).unwrap();
        assert_eq!(r, 0.0);
        assert!(!t);
        assert_eq!(s1.as_leaf().unwrap().as_f64().unwrap()[1], 1.0);
        // walls clamp: up from row 0 stays
        let (s2, _, _) = env.step(&act(0)).unwrap();
        assert_eq!(s2.as_leaf().unwrap().as_f64().unwrap()[1], 1.0);
    }

    #[test]
    fn goal_pays_one_and_terminates() {
        let mut env = GridWorld::new(4, 50);
        env.reset();
        for a in [1, 1, 1, 2, 2] {
            let (_, r, t) = env.step(&act(a)).unwrap();
            assert_eq!(r, 0.0);
            assert!(!t);
        }
        let (_, r, t) = env.step(&act(2)).unwrap();
        assert_eq!(r, 1.0);
        assert!(t);
        assert!(matches!(env.step(&act(0)), Err(EnvError::SteppedTerminal)));
    }

    #[test]
    fn truncates_at_the_step_limit() {
        let mut env = GridWorld::new(4, 5);
        env.reset();
        for i in 0..5 {
            let (_, _, t) = env.step(&act(3)).unwrap();
            assert_eq!(t, i == 4);
        }
    }

    #[test]
    fn invalid_action_rejected() {
        let mut env = GridWorld::new(4, 50);
        env.reset();
        assert!(matches!(env.step(&act(7)), Err(EnvError::InvalidAction(_))));
    }
}
