//! Temporal-difference loss for Q-learning.

use std::sync::Arc;

use rlstage_graph::{ApiParam, Component};

#[derive(Clone, Copy, Debug)]
pub struct DqnLossConfig {
    /// Effective discount applied to the bootstrap value; for n-step
    /// returns this is gamma^n.
    pub discount: f64,
    pub double_q: bool,
    /// When set, per-sample Huber loss with this threshold; squared error
    /// otherwise.
    pub huber_delta: Option<f64>,
}

impl DqnLossConfig {
    pub fn new(discount: f64, double_q: bool, huber_delta: Option<f64>) -> DqnLossConfig {
        assert!((0.0..=1.0).contains(&discount), "discount must lie in [0, 1]");
        DqnLossConfig { discount, double_q, huber_delta }
    }
}

/// Importance-weighted TD loss.
///
/// `compute(q_s, q_online_s2, q_target_s2, actions, rewards, terminals,
/// weights)` returns the scalar loss (mean of weighted per-sample losses)
/// and per-sample |delta|. The target
/// `y = r + discount * (1 - terminal) * bootstrap` uses the target network's
/// value at the online argmax when double-Q is enabled, the target maximum
/// otherwise, and is wrapped in stop_gradient so no gradient reaches the
/// target network or the bootstrap path.
pub fn dqn_loss(name: &str, cfg: DqnLossConfig) -> Component {
    let mut c = Component::new(name).expect("valid component name");
    c.register_graph_fn(
        "td_loss",
        2,
        Arc::new(move |ctx, args| {
            let q_s = args[0].leaf()?;
            let q_online_s2 = args[1].leaf()?;
            let q_target_s2 = args[2].leaf()?;
            let actions = args[3].leaf()?;
            let rewards = args[4].leaf()?;
            let terminals = args[5].leaf()?;
            let weights = args[6].leaf()?;

            let num_actions = *ctx.tail_shape(q_s).last().ok_or_else(|| {
                rlstage_graph::GraphError::Invalid("action values need an action axis".into())
            })?;

            let taken = ctx.one_hot(actions, num_actions)?;
            let q_taken = {
                let masked = ctx.mul(q_s, taken)?;
                ctx.sum(masked, Some(-1), false)?
            };

            let bootstrap = if cfg.double_q {
                let next_action = ctx.argmax(q_online_s2, -1)?;
                let sel = ctx.one_hot(next_action, num_actions)?;
                let masked = ctx.mul(q_target_s2, sel)?;
                ctx.sum(masked, Some(-1), false)?
            } else {
                ctx.max(q_target_s2, Some(-1), false)?
            };

            let one = ctx.scalar(1.0);
            let zero = ctx.scalar(0.0);
            let continue_mask = {
                let t = ctx.where_(terminals, zero, one)?;
                ctx.mark_batch(t, true)
            };
            let discount = ctx.scalar(cfg.discount);
            let scaled = {
                let d = ctx.mul(bootstrap, discount)?;
                ctx.mul(d, continue_mask)?
            };
            let y = ctx.add(rewards, scaled)?;
            let y = ctx.stop_gradient(y)?;

            let delta = ctx.sub(y, q_taken)?;
            let abs_delta = ctx.abs(delta)?;
            let per_sample = match cfg.huber_delta {
                None => ctx.square(delta)?,
                Some(d) => {
                    let half = ctx.scalar(0.5);
                    let d_c = ctx.scalar(d);
                    let half_d = ctx.scalar(0.5 * d);
                    let quad = {
                        let s = ctx.square(delta)?;
                        ctx.mul(s, half)?
                    };
                    let lin = {
                        let shifted = ctx.sub(abs_delta, half_d)?;
                        ctx.mul(shifted, d_c)?
                    };
                    let small = ctx.less(abs_delta, d_c)?;
                    ctx.where_(small, quad, lin)?
                }
            };
            let weighted = ctx.mul(per_sample, weights)?;
            let loss = ctx.mean(weighted, None, false)?;
            Ok(vec![loss.into(), ctx.mark_batch(abs_delta, true).into()])
        }),
    )
    .unwrap();
    c.register_api(
        "compute",
        vec![
            ApiParam::required("q_s"),
            ApiParam::required("q_online_s2"),
            ApiParam::required("q_target_s2"),
            ApiParam::required("actions"),
            ApiParam::required("rewards"),
            ApiParam::required("terminals"),
            ApiParam::required("weights"),
        ],
        Arc::new(|ctx, args| ctx.call_graph_fn("td_loss", args)),
    )
    .unwrap();
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use rlstage_core::{Space, Tensor, Value};
    use rlstage_graph::{BackendMode, ComponentTest};

    fn harness(cfg: DqnLossConfig, actions: usize) -> ComponentTest {
        ComponentTest::new(
            dqn_loss("loss", cfg),
            &[
                ("q_s", Space::float_box(&[actions]).with_batch_rank(true)),
                ("q_online_s2", Space::float_box(&[actions]).with_batch_rank(true)),
                ("q_target_s2", Space::float_box(&[actions]).with_batch_rank(true)),
                ("actions", Space::int_box(actions).with_batch_rank(true)),
                ("rewards", Space::float_box(&[]).with_batch_rank(true)),
                ("terminals", Space::bool_box(&[]).with_batch_rank(true)),
                ("weights", Space::float_box(&[]).with_batch_rank(true)),
            ],
            BackendMode::Staged,
            0,
        )
        .unwrap()
    }

    fn run(
        t: &mut ComponentTest,
        q_s: Vec<f64>,
        q_on2: Vec<f64>,
        q_tg2: Vec<f64>,
        a: Vec<i64>,
        r: Vec<f64>,
        term: Vec<bool>,
        actions: usize,
    ) -> (f64, Vec<f64>) {
        let b = a.len();
        let w = vec![1.0; b];
        let out = t
            .test(
                "compute",
                &[
                    Value::Leaf(Tensor::from_f64(vec![b, actions], q_s).unwrap()),
                    Value::Leaf(Tensor::from_f64(vec![b, actions], q_on2).unwrap()),
                    Value::Leaf(Tensor::from_f64(vec![b, actions], q_tg2).unwrap()),
                    Value::Leaf(Tensor::from_i64(vec![b], a).unwrap()),
                    Value::Leaf(Tensor::from_f64(vec![b], r).unwrap()),
                    Value::Leaf(Tensor::from_bool(vec![b], term).unwrap()),
                    Value::Leaf(Tensor::from_f64(vec![b], w).unwrap()),
                ],
            )
            .unwrap();
        (
            out[0].as_leaf().unwrap().scalar_as_f64().unwrap(),
            out[1].as_leaf().unwrap().as_f64().unwrap().to_vec(),
        )
    }

    #[test]
    fn terminal_masks_the_bootstrap() {
        let mut t = harness(DqnLossConfig::new(0.9, true, None), 2);
        // terminal = 1, r = 5, any q' -> y = 5
        let (_, abs) = run(
            &mut t,
            vec![5.0, 0.0],
            vec![100.0, 100.0],
            vec![100.0, 100.0],
            vec![0],
            vec![5.0],
            vec![true],
            2,
        );
        assert_eq!(abs, vec![0.0]);
    }

    #[test]
    fn zero_discount_targets_the_reward() {
        let mut t = harness(DqnLossConfig::new(0.0, true, None), 2);
        let (loss, abs) = run(
            &mut t,
            vec![1.0, 0.0],
            vec![9.0, 9.0],
            vec![9.0, 9.0],
            vec![0],
            vec![1.0],
            vec![false],
            2,
        );
        assert_eq!(abs, vec![0.0]);
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn double_q_bootstraps_target_at_online_argmax() {
        // r=1, gamma=0.9, q_online_s2=[1,3], q_target_s2=[2,0]:
        // argmax = 1, y = 1 + 0.9 * 0 = 1.0
        let mut t = harness(DqnLossConfig::new(0.9, true, None), 2);
        let (_, abs) = run(
            &mut t,
            vec![1.0, 0.0],
            vec![1.0, 3.0],
            vec![2.0, 0.0],
            vec![0],
            vec![1.0],
            vec![false],
            2,
        );
        assert!((abs[0] - 0.0).abs() < 1e-12);
    }

    #[test]
    fn single_q_bootstraps_the_target_maximum() {
        let mut t = harness(DqnLossConfig::new(1.0, false, None), 2);
        // y = 0 + 1.0 * max([2,0]) = 2; q_taken = 0 -> |delta| = 2
        let (loss, abs) = run(
            &mut t,
            vec![0.0, 0.0],
            vec![1.0, 3.0],
            vec![2.0, 0.0],
            vec![0],
            vec![0.0],
            vec![false],
            2,
        );
        assert_eq!(abs, vec![2.0]);
        assert_eq!(loss, 4.0);
    }

    #[test]
    fn huber_switches_to_linear_beyond_delta() {
        let mut t = harness(DqnLossConfig::new(0.0, true, Some(1.0)), 2);
        // |delta| = 3 with terminal target: huber = 1*(3 - 0.5) = 2.5
        let (loss, _) = run(
            &mut t,
            vec![3.0, 0.0],
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            vec![0],
            vec![0.0],
            vec![false],
            2,
        );
        assert_eq!(loss, 2.5);
    }
}
