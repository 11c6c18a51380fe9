//! Policy: trunk network plus one action head per action-space leaf, with
//! epsilon-greedy selection over discrete leaves.
//!
//! Discrete (categorical int) leaves get a head emitting one value per
//! category, optionally through a dueling aggregation; actions come from
//! the exploration subcomponent. Continuous float leaves get a linear head
//! reshaped to the leaf shape and clipped into declared bounds. Multi-leaf
//! action spaces re-nest the per-leaf actions into the declared structure.

use std::sync::Arc;

use rlstage_core::Space;
use rlstage_graph::{ApiCtx, ApiParam, Component, GraphResult, Rec};

use crate::dueling::dueling_head;
use crate::exploration::epsilon_greedy;
use crate::layers::{dense_layer, network, Activation, LayerSpec};

fn head_name(flat_key: &str) -> String {
    if flat_key.is_empty() {
        "head".to_string()
    } else {
        format!("head_{}", flat_key.trim_start_matches('/').replace('/', "_"))
    }
}

#[derive(Clone)]
struct LeafPlan {
    key: String,
    head: String,
    kind: LeafKind,
}

#[derive(Clone)]
enum LeafKind {
    Discrete,
    Continuous,
}

/// Build a policy for the given action space.
///
/// APIs: `get_q(nn_input)` (single discrete leaf only), `get_action(nn_input,
/// eps)`, and `get_action_greedy(nn_input)`. With `explore` disabled (target
/// networks) only `get_q` is registered and no exploration subcomponent
/// exists.
pub fn policy(
    name: &str,
    layers: &[LayerSpec],
    action_space: &Space,
    dueling: bool,
    explore: bool,
) -> GraphResult<Component> {
    let mut c = Component::new(name)?;
    c.add_subcomponent(network("network", layers))?;

    let mut plans = Vec::new();
    for (key, leaf) in action_space.flatten() {
        let head = head_name(&key);
        match leaf {
            Space::IntBox { num_categories: Some(n), shape, .. } if shape.is_empty() => {
                if dueling {
                    c.add_subcomponent(dueling_head(&head, *n))?;
                } else {
                    c.add_subcomponent(dense_layer(&head, *n, Activation::Linear))?;
                }
                plans.push(LeafPlan { key, head, kind: LeafKind::Discrete });
            }
            Space::FloatBox { shape, low, high, .. } => {
                let units: usize = shape.iter().product::<usize>().max(1);
                c.add_subcomponent(dense_layer(&head, units, Activation::Linear))?;
                let tail = shape.clone();
                let (lo, hi) = (*low, *high);
                let fn_name = format!("shape_{}", head);
                c.register_graph_fn(
                    &fn_name,
                    1,
                    Arc::new(move |ctx, args| {
                        let x = args[0].leaf()?;
                        let mut spec: Vec<isize> = vec![-1];
                        spec.extend(tail.iter().map(|&e| e as isize));
                        let shaped = ctx.reshape(x, spec)?;
                        let out = if lo.is_some() || hi.is_some() {
                            ctx.clip(shaped, lo, hi)?
                        } else {
                            shaped
                        };
                        Ok(vec![out.into()])
                    }),
                )?;
                plans.push(LeafPlan { key, head, kind: LeafKind::Continuous });
            }
            other => {
                return Err(rlstage_graph::GraphError::Invalid(format!(
                    "unsupported action leaf at '{}': {:?}",
                    key, other
                )))
            }
        }
    }
    if explore {
        c.add_subcomponent(epsilon_greedy("exploration"))?;
    }

    let single_discrete = plans.len() == 1 && matches!(plans[0].kind, LeafKind::Discrete);
    if single_discrete {
        let head = plans[0].head.clone();
        let q_method = if dueling { "q_from_features" } else { "apply" };
        let q_method = q_method.to_string();
        c.register_api(
            "get_q",
            vec![ApiParam::required("nn_input")],
            Arc::new(move |ctx, args| {
                let f = ctx.call_api("network", "apply", args)?;
                ctx.call_api(&head, &q_method, &f)
            }),
        )?;
    }

    // Action selection needs the exploration subcomponent; target policies
    // expose only get_q.
    if explore {
        let space = action_space.clone();
        let dueling_flag = dueling;
        let space_sel = space.clone();
        let plans_sel = plans.clone();
        c.register_api(
            "get_action",
            vec![ApiParam::required("nn_input"), ApiParam::required("eps")],
            Arc::new(move |ctx, args| {
                let f = ctx.call_api("network", "apply", &[args[0]])?;
                let mut leaves = Vec::new();
                for plan in &plans_sel {
                    let a = leaf_action(ctx, plan, f[0], Some(args[1]), dueling_flag)?;
                    leaves.push((plan.key.clone(), a));
                }
                Ok(vec![nest_leaves(ctx, &space_sel, &leaves)?])
            }),
        )?;
        let plans_greedy = plans.clone();
        c.register_api(
            "get_action_greedy",
            vec![ApiParam::required("nn_input")],
            Arc::new(move |ctx, args| {
                let f = ctx.call_api("network", "apply", &[args[0]])?;
                let mut leaves = Vec::new();
                for plan in &plans_greedy {
                    let a = leaf_action(ctx, plan, f[0], None, dueling_flag)?;
                    leaves.push((plan.key.clone(), a));
                }
                Ok(vec![nest_leaves(ctx, &space, &leaves)?])
            }),
        )?;
    }
    Ok(c)
}

fn leaf_action(
    ctx: &mut ApiCtx<'_>,
    plan: &LeafPlan,
    features: Rec,
    eps: Option<Rec>,
    dueling: bool,
) -> GraphResult<Rec> {
    match plan.kind {
        LeafKind::Discrete => {
            let q_method = if dueling { "q_from_features" } else { "apply" };
            let q = ctx.call_api(&plan.head, q_method, &[features])?;
            match eps {
                Some(e) => Ok(ctx.call_api("exploration", "select", &[q[0], e])?[0]),
                None => {
                    // Greedy selection without an exploration subcomponent
                    // is only available when one exists; target policies
                    // use get_q instead.
                    Ok(ctx.call_api("exploration", "greedy", &[q[0]])?[0])
                }
            }
        }
        LeafKind::Continuous => {
            let h = ctx.call_api(&plan.head, "apply", &[features])?;
            Ok(ctx.call_graph_fn(&format!("shape_{}", plan.head), &[h[0]])?[0])
        }
    }
}

/// Re-nest per-leaf action records into the action space's structure.
fn nest_leaves(
    ctx: &mut ApiCtx<'_>,
    space: &Space,
    leaves: &[(String, Rec)],
) -> GraphResult<Rec> {
    fn nest(
        ctx: &mut ApiCtx<'_>,
        space: &Space,
        prefix: &str,
        leaves: &[(String, Rec)],
    ) -> GraphResult<Rec> {
        match space {
            Space::Dict { children, .. } => {
                let mut built = Vec::new();
                for (k, child) in children {
                    let r = nest(ctx, child, &format!("{}/{}", prefix, k), leaves)?;
                    built.push((k.clone(), r));
                }
                let pairs: Vec<(&str, Rec)> =
                    built.iter().map(|(k, r)| (k.as_str(), *r)).collect();
                ctx.nest_dict(&pairs)
            }
            Space::Tuple { items, .. } => {
                let mut built = Vec::new();
                for (i, child) in items.iter().enumerate() {
                    built.push(nest(ctx, child, &format!("{}/{}", prefix, i), leaves)?);
                }
                ctx.nest_tuple(&built)
            }
            _ => leaves
                .iter()
                .find(|(k, _)| k == prefix)
                .map(|(_, r)| *r)
                .ok_or_else(|| {
                    rlstage_graph::GraphError::Invalid(format!("no action head for leaf '{}'", prefix))
                }),
        }
    }
    nest(ctx, space, "", leaves)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rlstage_core::{Tensor, Value};
    use rlstage_graph::{BackendMode, ComponentTest};

    fn specs() -> Vec<LayerSpec> {
        vec![LayerSpec { units: 8, activation: Activation::Relu }]
    }

    #[test]
    fn single_discrete_policy_emits_contained_actions() {
        let action = Space::int_box(3).with_batch_rank(true);
        let c = policy("policy", &specs(), &action, true, true).unwrap();
        let mut t = ComponentTest::new(
            c,
            &[
                ("nn_input", Space::float_box(&[4]).with_batch_rank(true)),
                ("eps", Space::float_box(&[])),
            ],
            BackendMode::Staged,
            2,
        )
        .unwrap();
        let x = Value::Leaf(Tensor::from_f64(vec![5, 4], vec![0.1; 20]).unwrap());
        let eps = Value::Leaf(Tensor::scalar_f64(0.5));
        let a = t.test("get_action", &[x, eps]).unwrap();
        assert!(action.contains(&a[0]));
        assert_eq!(a[0].as_leaf().unwrap().shape(), &[5]);
    }

    #[test]
    fn dict_action_space_re_nests() {
        let action = Space::dict(vec![
            ("discrete", Space::int_box(4)),
            ("cont", Space::float_box(&[])),
        ])
        .unwrap()
        .with_batch_rank(true);
        let c = policy("policy", &specs(), &action, false, true).unwrap();
        let mut t = ComponentTest::new(
            c,
            &[
                ("nn_input", Space::float_box(&[6]).with_batch_rank(true)),
                ("eps", Space::float_box(&[])),
            ],
            BackendMode::Staged,
            2,
        )
        .unwrap();
        let x = Value::Leaf(Tensor::from_f64(vec![3, 6], vec![0.2; 18]).unwrap());
        let eps = Value::Leaf(Tensor::scalar_f64(0.3));
        let a = t.test("get_action", &[x, eps]).unwrap().remove(0);
        assert!(action.contains(&a));
        assert_eq!(a.get("discrete").unwrap().as_leaf().unwrap().shape(), &[3]);
        assert_eq!(a.get("cont").unwrap().as_leaf().unwrap().shape(), &[3]);
    }

    #[test]
    fn q_values_have_action_extent() {
        let action = Space::int_box(5).with_batch_rank(true);
        let c = policy("policy", &specs(), &action, true, false).unwrap();
        let mut t = ComponentTest::new(
            c,
            &[("nn_input", Space::float_box(&[4]).with_batch_rank(true))],
            BackendMode::Staged,
            2,
        )
        .unwrap();
        let x = Value::Leaf(Tensor::from_f64(vec![2, 4], vec![0.5; 8]).unwrap());
        let q = t.test("get_q", &[x]).unwrap();
        assert_eq!(q[0].as_leaf().unwrap().shape(), &[2, 5]);
    }
}
