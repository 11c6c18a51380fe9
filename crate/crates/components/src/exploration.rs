//! Epsilon-greedy action selection over action values.

use std::sync::Arc;

use rlstage_graph::{ApiParam, Component};

/// `select(q, eps)` takes the argmax action with probability 1-eps and a
/// uniform random action otherwise, per batch row. `greedy(q)` is the pure
/// argmax. Ties break toward the lowest action index.
pub fn epsilon_greedy(name: &str) -> Component {
    let mut c = Component::new(name).expect("valid component name");
    c.register_graph_fn(
        "select",
        1,
        Arc::new(|ctx, args| {
            let q = args[0].leaf()?;
            let eps = args[1].leaf()?;
            let greedy = ctx.argmax(q, -1)?;
            // One uniform per row decides explore/exploit; a second field of
            // uniforms shaped like q picks the random action via argmax,
            // which is uniform over actions.
            let rows = ctx.sum(q, Some(-1), false)?;
            let u = ctx.rand_like(rows)?;
            let noise = ctx.rand_like(q)?;
            let random_action = ctx.argmax(noise, -1)?;
            let take_random = ctx.less(u, eps)?;
            let action = ctx.where_(take_random, random_action, greedy)?;
            Ok(vec![ctx.mark_batch(action, true).into()])
        }),
    )
    .unwrap();
    c.register_graph_fn(
        "greedy",
        1,
        Arc::new(|ctx, args| {
            let q = args[0].leaf()?;
            let a = ctx.argmax(q, -1)?;
            Ok(vec![ctx.mark_batch(a, true).into()])
        }),
    )
    .unwrap();
    c.register_api(
        "select",
        vec![ApiParam::required("q"), ApiParam::required("eps")],
        Arc::new(|ctx, args| ctx.call_graph_fn("select", args)),
    )
    .unwrap();
    c.register_api(
        "greedy",
        vec![ApiParam::required("q")],
        Arc::new(|ctx, args| ctx.call_graph_fn("greedy", args)),
    )
    .unwrap();
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use rlstage_core::{Space, Tensor, Value};
    use rlstage_graph::{BackendMode, ComponentTest};

    fn harness() -> ComponentTest {
        ComponentTest::new(
            epsilon_greedy("exploration"),
            &[
                ("q", Space::float_box(&[4]).with_batch_rank(true)),
                ("eps", Space::float_box(&[])),
            ],
            BackendMode::Staged,
            11,
        )
        .unwrap()
    }

    #[test]
    fn zero_epsilon_is_greedy_and_deterministic() {
        let mut t = harness();
        let q = Value::Leaf(
            Tensor::from_f64(vec![2, 4], vec![0.0, 3.0, 1.0, 2.0, 9.0, 1.0, 1.0, 1.0]).unwrap(),
        );
        let eps = Value::Leaf(Tensor::scalar_f64(0.0));
        let a1 = t.test("select", &[q.clone(), eps.clone()]).unwrap();
        let a2 = t.test("select", &[q, eps]).unwrap();
        assert_eq!(a1[0].as_leaf().unwrap().as_i64().unwrap(), &[1, 0]);
        assert_eq!(a1, a2);
    }

    #[test]
    fn full_epsilon_is_roughly_uniform() {
        let mut t = harness();
        let mut counts = [0usize; 4];
        let q = Value::Leaf(Tensor::from_f64(vec![1, 4], vec![9.0, 0.0, 0.0, 0.0]).unwrap());
        let eps = Value::Leaf(Tensor::scalar_f64(1.0));
        let n = 10_000;
        for _ in 0..n {
            let a = t.test("select", &[q.clone(), eps.clone()]).unwrap();
            counts[a[0].as_leaf().unwrap().as_i64().unwrap()[0] as usize] += 1;
        }
        // Chi-squared sanity against uniform (3 dof, 0.1% cutoff ~ 16.3).
        let expected = n as f64 / 4.0;
        let chi2: f64 =
            counts.iter().map(|c| (*c as f64 - expected).powi(2) / expected).sum();
        assert!(chi2 < 16.3, "chi2 = {} with counts {:?}", chi2, counts);
    }
}
