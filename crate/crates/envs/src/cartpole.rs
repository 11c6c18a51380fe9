//! Pole-on-cart balancing with explicit Euler integration.
//!
//! Constants: cart mass 1.0, pole mass 0.1, half pole length 0.5, force
//! magnitude 10.0, gravity 9.8, dt 0.02. The episode ends when |x| > 2.4 or
//! |theta| > ~12 degrees (0.2094395 rad), or at the step limit; reward is 1
//! per surviving step. Initial state is uniform in [-0.05, 0.05]^4 from the
//! seeded stream.

use rand::Rng;
use rlstage_core::rng::{self, SeedableStream};
use rlstage_core::{Space, Tensor, Value};

use crate::{EnvError, EnvResult, Environment};

pub const GRAVITY: f64 = 9.8;
pub const CART_MASS: f64 = 1.0;
pub const POLE_MASS: f64 = 0.1;
pub const HALF_POLE_LENGTH: f64 = 0.5;
pub const FORCE: f64 = 10.0;
pub const DT: f64 = 0.02;
pub const X_LIMIT: f64 = 2.4;
pub const THETA_LIMIT: f64 = 0.209_439_5;

pub struct CartPole {
    state: [f64; 4],
    steps: usize,
    max_steps: usize,
    rng: SeedableStream,
    needs_reset: bool,
}

impl CartPole {
    pub fn new(seed: u64, max_steps: usize) -> CartPole {
        CartPole {
            state: [0.0; 4],
            steps: 0,
            max_steps,
            rng: rng::derive(seed, "/env/cartpole"),
            needs_reset: true,
        }
    }

    fn observe(&self) -> Value {
        Value::Leaf(Tensor::from_f64(vec![4], self.state.to_vec()).unwrap())
    }

    /// One explicit Euler step of the standard dynamics.
    pub fn integrate(state: [f64; 4], force: f64) -> [f64; 4] {
        let [x, x_dot, theta, theta_dot] = state;
        let total_mass = CART_MASS + POLE_MASS;
        let pole_mass_length = POLE_MASS * HALF_POLE_LENGTH;
        let cos = theta.cos();
        let sin = theta.sin();
        let temp = (force + pole_mass_length * theta_dot * theta_dot * sin) / total_mass;
        let theta_acc = (GRAVITY * sin - cos * temp)
            / (HALF_POLE_LENGTH * (4.0 / 3.0 - POLE_MASS * cos * cos / total_mass));
        let x_acc = temp - pole_mass_length * theta_acc * cos / total_mass;
        [
            x + DT * x_dot,
            x_dot + DT * x_acc,
            theta + DT * theta_dot,
            theta_dot + DT * theta_acc,
        ]
    }
}

impl Environment for CartPole {
    fn state_space(&self) -> Space {
        Space::float_box(&[4]).with_batch_rank(true)
    }

    fn action_space(&self) -> Space {
        Space::int_box(2).with_batch_rank(true)
    }

    fn reset(&mut self) -> Value {
        for v in self.state.iter_mut() {
            *v = self.rng.gen_range(-0.05..0.05);
        }
        self.steps = 0;
        self.needs_reset = false;
        self.observe()
    }

    fn step(&mut self, action: &Value) -> EnvResult<(Value, f64, bool)> {
        if self.needs_reset {
            return Err(EnvError::SteppedTerminal);
        }
        let a = action.as_leaf()?.scalar_as_i64()?;
        if !(0..2).contains(&a) {
            return Err(EnvError::InvalidAction(format!("cartpole action {} outside 0..2", a)));
        }
        let force = if a == 1 { FORCE } else { -FORCE };
        self.state = Self::integrate(self.state, force);
        self.steps += 1;
        let fell = self.state[0].abs() > X_LIMIT || self.state[2].abs() > THETA_LIMIT;
        let terminal = fell || self.steps >= self.max_steps;
        self.needs_reset = terminal;
        Ok((self.observe(), 1.0, terminal))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn euler_oracle_one_step() {
        // Recompute the documented dynamics directly for a known state.
        let s: [f64; 4] = [0.01, -0.02, 0.03, 0.04];
        let force = FORCE;
        let total = CART_MASS + POLE_MASS;
        let pml = POLE_MASS * HALF_POLE_LENGTH;
        let (sin, cos) = (s[2].sin(), s[2].cos());
        let temp = (force + pml * s[3] * s[3] * sin) / total;
        let theta_acc = (GRAVITY * sin - cos * temp)
            / (HALF_POLE_LENGTH * (4.0 / 3.0 - POLE_MASS * cos * cos / total));
        let x_acc = temp - pml * theta_acc * cos / total;
        let expect = [
            s[0] + DT * s[1],
            s[1] + DT * x_acc,
            s[2] + DT * s[3],
            s[3] + DT * theta_acc,
        ];
        assert_eq!(CartPole::integrate(s, force), expect);
    }

    #[test]
    fn episodes_are_seed_deterministic() {
        let run = |seed| {
            let mut env = CartPole::new(seed, 200);
            let mut trace = vec![env.reset()];
            for i in 0..20 {
                let (s, _, t) = env
                    .step(&Value::Leaf(Tensor::scalar_i64(i % 2)))
                    .unwrap();
                trace.push(s);
                if t {
                    break;
                }
            }
            trace
        };
        assert_eq!(run(9), run(9));
        assert_ne!(run(9), run(10));
    }

    #[test]
    fn pole_past_threshold_terminates() {
        let mut env = CartPole::new(3, 200);
        env.reset();
        // Push one way until failure; reward is 1 per surviving step.
        let mut total = 0.0;
        let mut steps = 0;
        loop {
            let (s, r, t) = env.step(&Value::Leaf(Tensor::scalar_i64(1))).unwrap();
            total += r;
            steps += 1;
            if t {
                let leaf = s.as_leaf().unwrap().as_f64().unwrap().to_vec();
                assert!(leaf[0].abs() > X_LIMIT || leaf[2].abs() > THETA_LIMIT);
                break;
            }
            assert!(steps < 200, "constant force must topple the pole quickly");
        }
        assert_eq!(total, steps as f64);
        assert!(matches!(
            env.step(&Value::Leaf(Tensor::scalar_i64(0))),
            Err(EnvError::SteppedTerminal)
        ));
    }
}
