//! Incremental n-step return assembly over per-environment episode
//! fragments.
//!
//! Transitions become records once their bootstrap state is known: after n
//! further observations, or immediately at a terminal (with the horizon and
//! accumulated reward truncated there). A truncating flush for fragment or
//! budget boundaries bootstraps from the newest known state instead.

use std::collections::VecDeque;

use rlstage_core::Value;

#[derive(Clone, Debug)]
pub struct StepEntry {
    pub state: Value,
    pub action: Value,
    pub reward: f64,
    pub terminal: bool,
}

/// One stored transition: `reward` carries the discounted n-step sum and
/// `next_state` the bootstrap state (ignored when `terminal`).
#[derive(Clone, Debug)]
pub struct NStepRecord {
    pub state: Value,
    pub action: Value,
    pub reward: f64,
    pub next_state: Value,
    pub terminal: bool,
}

#[derive(Default)]
pub struct EpisodeBuffer {
    steps: VecDeque<StepEntry>,
}

impl EpisodeBuffer {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Append one observation and drain every record whose horizon is
    /// complete.
    pub fn push(&mut self, entry: StepEntry, n: usize, gamma: f64) -> Vec<NStepRecord> {
        let terminal = entry.terminal;
        self.steps.push_back(entry);
        let mut out = Vec::new();
        while self.steps.len() > n {
            out.push(self.emit_front(n, gamma, false));
        }
        if terminal {
            while let Some(record) = self.try_emit_terminal(n, gamma) {
                out.push(record);
            }
        }
        out
    }

    fn emit_front(&mut self, n: usize, gamma: f64, at_terminal: bool) -> NStepRecord {
        let horizon = n.min(self.steps.len().saturating_sub(if at_terminal { 0 } else { 1 }));
        let horizon = horizon.max(1);
        let mut reward = 0.0;
        let mut scale = 1.0;
        let mut terminal = false;
        for j in 0..horizon {
            let step = &self.steps[j];
            reward += scale * step.reward;
            scale *= gamma;
            if step.terminal {
                terminal = true;
                break;
            }
        }
        let next_state = if terminal || self.steps.len() <= horizon {
            self.steps.back().expect("nonempty").state.clone()
        } else {
            self.steps[horizon].state.clone()
        };
        let front = self.steps.pop_front().expect("nonempty");
        NStepRecord {
            state: front.state,
            action: front.action,
            reward,
            next_state,
            terminal: terminal || front.terminal,
        }
    }

    fn try_emit_terminal(&mut self, n: usize, gamma: f64) -> Option<NStepRecord> {
        if self.steps.is_empty() {
            return None;
        }
        Some(self.emit_front(n, gamma, true))
    }

    /// Drain everything with truncated horizons, bootstrapping from
    /// `final_state` (the environment's current state) when given.
    pub fn flush_truncated(
        &mut self,
        n: usize,
        gamma: f64,
        final_state: Option<&Value>,
    ) -> Vec<NStepRecord> {
        let mut out = Vec::new();
        while !self.steps.is_empty() {
            let mut record = self.emit_front(n, gamma, true);
            if !record.terminal {
                if let Some(fs) = final_state {
                    record.next_state = fs.clone();
                }
            }
            out.push(record);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rlstage_core::Tensor;

    fn state(v: f64) -> Value {
        Value::Leaf(Tensor::from_f64(vec![1], vec![v]).unwrap())
    }

    fn entry(s: f64, r: f64, terminal: bool) -> StepEntry {
        StepEntry {
            state: state(s),
            action: Value::Leaf(Tensor::scalar_i64(0)),
            reward: r,
            terminal,
        }
    }

    fn state_of(v: &Value) -> f64 {
        v.as_leaf().unwrap().as_f64().unwrap()[0]
    }

    #[test]
    fn one_step_records_emit_with_lookahead() {
        let mut buf = EpisodeBuffer::default();
        assert!(buf.push(entry(0.0, 1.0, false), 1, 0.9).is_empty());
        let recs = buf.push(entry(1.0, 2.0, false), 1, 0.9);
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].reward, 1.0);
        assert_eq!(state_of(&recs[0].next_state), 1.0);
        assert!(!recs[0].terminal);
    }

    #[test]
    fn terminal_drains_and_truncates_bootstrap() {
        // 5-step episode with n = 3: rewards 1..5, gamma 0.5.
        let mut buf = EpisodeBuffer::default();
        let gamma = 0.5;
        let mut all = Vec::new();
        for i in 0..5 {
            let terminal = i == 4;
            all.extend(buf.push(entry(i as f64, (i + 1) as f64, terminal), 3, gamma));
        }
        assert_eq!(all.len(), 5);
        // Record 0: r = 1 + 0.5*2 + 0.25*3 = 2.75, bootstrap s3, alive.
        assert!((all[0].reward - 2.75).abs() < 1e-12);
        assert_eq!(state_of(&all[0].next_state), 3.0);
        assert!(!all[0].terminal);
        // Record 1: r = 2 + 0.5*3 + 0.25*4 = 4.5, bootstrap s4, alive.
        assert!((all[1].reward - 4.5).abs() < 1e-12);
        assert!(!all[1].terminal);
        // Record 2 reaches the terminal inside its window:
        // r = 3 + 0.5*4 + 0.25*5 = 6.25, terminal (no post-terminal rewards).
        assert!((all[2].reward - 6.25).abs() < 1e-12);
        assert!(all[2].terminal);
        // Record 3: r = 4 + 0.5*5 = 6.5, terminal.
        assert!((all[3].reward - 6.5).abs() < 1e-12);
        assert!(all[3].terminal);
        // Record 4: r = 5, terminal.
        assert!((all[4].reward - 5.0).abs() < 1e-12);
        assert!(all[4].terminal);
    }

    #[test]
    fn truncated_flush_bootstraps_from_the_final_state() {
        let mut buf = EpisodeBuffer::default();
        buf.push(entry(0.0, 1.0, false), 3, 1.0);
        buf.push(entry(1.0, 1.0, false), 3, 1.0);
        let fs = state(9.0);
        let recs = buf.flush_truncated(3, 1.0, Some(&fs));
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].reward, 2.0);
        assert!(!recs[0].terminal);
        assert_eq!(state_of(&recs[0].next_state), 9.0);
        assert!(buf.is_empty());
    }

    #[test]
    fn interleaving_envs_is_the_callers_concern() {
        // Two independent buffers keep per-env ordering.
        let mut a = EpisodeBuffer::default();
        let mut b = EpisodeBuffer::default();
        a.push(entry(0.0, 1.0, false), 1, 1.0);
        b.push(entry(10.0, 5.0, false), 1, 1.0);
        let ra = a.push(entry(1.0, 1.0, false), 1, 1.0);
        let rb = b.push(entry(11.0, 5.0, false), 1, 1.0);
        assert_eq!(state_of(&ra[0].state), 0.0);
        assert_eq!(state_of(&rb[0].state), 10.0);
    }
}
