//! Dueling action-value head: separate state-value and advantage streams
//! combined with mean-subtracted aggregation, q = v + a - mean(a).

use std::sync::Arc;

use rlstage_graph::{ApiParam, Component, GraphResult, KernelCtx, TRef};

use crate::layers::{dense_layer, Activation};

/// q(s, a) = v(s) + adv(s, a) - mean_a adv(s, a), broadcast over actions.
pub fn combine_dueling(ctx: &mut KernelCtx<'_>, v: TRef, a: TRef) -> GraphResult<TRef> {
    let mean_a = ctx.mean(a, Some(-1), true)?;
    let centered = ctx.sub(a, mean_a)?;
    ctx.add(v, centered)
}

/// Head component with `value` and `advantage` dense subcomponents.
///
/// `q_from_features` maps trunk features to action values; `combine` exposes
/// the aggregation alone for direct testing.
pub fn dueling_head(name: &str, num_actions: usize) -> Component {
    let mut c = Component::new(name).expect("valid component name");
    c.add_subcomponent(dense_layer("value", 1, Activation::Linear)).unwrap();
    c.add_subcomponent(dense_layer("advantage", num_actions, Activation::Linear)).unwrap();
    c.register_graph_fn(
        "combine",
        1,
        Arc::new(|ctx, args| {
            let v = args[0].leaf()?;
            let a = args[1].leaf()?;
            Ok(vec![combine_dueling(ctx, v, a)?.into()])
        }),
    )
    .unwrap();
    c.register_api(
        "q_from_features",
        vec![ApiParam::required("features")],
        Arc::new(|ctx, args| {
            let v = ctx.call_api("value", "apply", args)?;
            let a = ctx.call_api("advantage", "apply", args)?;
            ctx.call_graph_fn("combine", &[v[0], a[0]])
        }),
    )
    .unwrap();
    c.register_api(
        "combine",
        vec![ApiParam::required("v"), ApiParam::required("a")],
        Arc::new(|ctx, args| ctx.call_graph_fn("combine", args)),
    )
    .unwrap();
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use rlstage_core::{Space, Tensor, Value};
    use rlstage_graph::{BackendMode, ComponentTest};

    fn combine_case(v: Vec<f64>, a: Vec<f64>, rows: usize, actions: usize) -> Vec<f64> {
        let mut t = ComponentTest::new(
            dueling_head("dueling", actions),
            &[
                ("features", Space::float_box(&[4]).with_batch_rank(true)),
                ("v", Space::float_box(&[1]).with_batch_rank(true)),
                ("a", Space::float_box(&[actions]).with_batch_rank(true)),
            ],
            BackendMode::Staged,
            0,
        )
        .unwrap();
        let out = t
            .test(
                "combine",
                &[
                    Value::Leaf(Tensor::from_f64(vec![rows, 1], v).unwrap()),
                    Value::Leaf(Tensor::from_f64(vec![rows, actions], a).unwrap()),
                ],
            )
            .unwrap();
        out[0].as_leaf().unwrap().as_f64().unwrap().to_vec()
    }

    #[test]
    fn aggregation_subtracts_the_advantage_mean() {
        // v=1, a=[1,2,3] -> q = 1 + [1,2,3] - 2 = [0,1,2]
        let q = combine_case(vec![1.0], vec![1.0, 2.0, 3.0], 1, 3);
        assert_eq!(q, vec![0.0, 1.0, 2.0]);
    }

    #[test]
    fn constant_advantage_collapses_to_value() {
        let q = combine_case(vec![0.7], vec![4.0, 4.0, 4.0, 4.0], 1, 4);
        assert!(q.iter().all(|x| (x - 0.7).abs() < 1e-15));
    }
}
