//! Named component test cases.
//!
//! Each case builds one library component from declared input spaces and
//! runs a fixed call sequence. The suite drives both the per-component CLI
//! checks and the backend-equivalence comparison: a case must produce
//! elementwise-identical outputs (within 1e-9 relative) in staged and
//! define-by-run mode under a shared seed.

use std::sync::Arc;

use rlstage_core::{rng, Buffer, Space, Tensor, Value};
use rlstage_graph::{BackendMode, Component, ComponentTest, GraphResult};

use crate::dueling::dueling_head;
use crate::exploration::epsilon_greedy;
use crate::layers::{dense_layer, network, Activation, LayerSpec};
use crate::loss::{dqn_loss, DqnLossConfig};
use crate::memory::{prioritized_replay, ring_buffer, PrioritizedReplayConfig};
use crate::optimizer::{optimizer, OptimizerConfig};
use crate::policy::policy;
use crate::preprocess::{moving_average_normalize, preprocessor_stack, PreprocessorSpec};
use crate::segtree::segment_tree;
use crate::sync::target_sync;

pub struct ComponentCase {
    pub name: String,
    pub build: Arc<dyn Fn() -> Component + Send + Sync>,
    pub input_spaces: Vec<(String, Space)>,
    pub calls: Vec<(String, Vec<Value>)>,
}

fn leaf_f64(shape: Vec<usize>, data: Vec<f64>) -> Value {
    Value::Leaf(Tensor::from_f64(shape, data).unwrap())
}

fn leaf_i64(shape: Vec<usize>, data: Vec<i64>) -> Value {
    Value::Leaf(Tensor::from_i64(shape, data).unwrap())
}

fn sampled(space: &Space, batch: Option<usize>, seed: u64) -> Value {
    let mut r = rng::derive(seed, "case-args");
    space.sample(&mut r, batch, None).unwrap()
}

fn batched_f(shape: &[usize]) -> Space {
    Space::float_box(shape).with_batch_rank(true)
}

fn record_space() -> Space {
    Space::dict(vec![
        ("state", Space::float_box(&[3])),
        ("action", Space::int_box(2)),
        ("reward", Space::float_box(&[])),
        ("next_state", Space::float_box(&[3])),
        ("terminal", Space::bool_box(&[])),
    ])
    .unwrap()
    .with_batch_rank(true)
}

fn record_batch(n: usize, seed: u64) -> Value {
    sampled(&record_space(), Some(n), seed)
}

fn case(
    name: &str,
    build: impl Fn() -> Component + Send + Sync + 'static,
    input_spaces: Vec<(&str, Space)>,
    calls: Vec<(&str, Vec<Value>)>,
) -> ComponentCase {
    ComponentCase {
        name: name.to_string(),
        build: Arc::new(build),
        input_spaces: input_spaces.into_iter().map(|(k, s)| (k.to_string(), s)).collect(),
        calls: calls.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
    }
}

/// The standard library suite. Covers every component family in both
/// stateless and stateful call patterns.
pub fn standard_cases() -> Vec<ComponentCase> {
    let mut cases = Vec::new();

    for (name, act) in [
        ("dense_relu", Activation::Relu),
        ("dense_tanh", Activation::Tanh),
        ("dense_linear", Activation::Linear),
    ] {
        let x = sampled(&batched_f(&[4]), Some(3), 1);
        cases.push(case(
            name,
            move || dense_layer("dense", 8, act),
            vec![("x", batched_f(&[4]))],
            vec![("apply", vec![x])],
        ));
    }

    let two = vec![
        LayerSpec { units: 8, activation: Activation::Relu },
        LayerSpec { units: 4, activation: Activation::Linear },
    ];
    let three = vec![
        LayerSpec { units: 8, activation: Activation::Tanh },
        LayerSpec { units: 8, activation: Activation::Relu },
        LayerSpec { units: 2, activation: Activation::Linear },
    ];
    for (name, spec) in [("network_two_layer", two), ("network_three_layer", three), ("network_empty", vec![])] {
        let x = sampled(&batched_f(&[5]), Some(2), 2);
        cases.push(case(
            name,
            move || network("net", &spec),
            vec![("x", batched_f(&[5]))],
            vec![("apply", vec![x])],
        ));
    }

    cases.push(case(
        "dueling_head",
        || dueling_head("dueling", 3),
        vec![
            ("features", batched_f(&[6])),
            ("v", batched_f(&[1])),
            ("a", batched_f(&[3])),
        ],
        vec![
            ("q_from_features", vec![sampled(&batched_f(&[6]), Some(2), 3)]),
            (
                "combine",
                vec![
                    leaf_f64(vec![1, 1], vec![1.0]),
                    leaf_f64(vec![1, 3], vec![1.0, 2.0, 3.0]),
                ],
            ),
        ],
    ));

    cases.push(case(
        "epsilon_greedy_select",
        || epsilon_greedy("exploration"),
        vec![("q", batched_f(&[4])), ("eps", Space::float_box(&[]))],
        vec![
            (
                "select",
                vec![sampled(&batched_f(&[4]), Some(6), 4), leaf_f64(vec![], vec![0.5])],
            ),
            (
                "select",
                vec![sampled(&batched_f(&[4]), Some(6), 5), leaf_f64(vec![], vec![1.0])],
            ),
        ],
    ));
    cases.push(case(
        "epsilon_greedy_greedy",
        || epsilon_greedy("exploration"),
        vec![("q", batched_f(&[4])), ("eps", Space::float_box(&[]))],
        vec![("greedy", vec![sampled(&batched_f(&[4]), Some(3), 6)])],
    ));

    cases.push(case(
        "preprocess_scale",
        || PreprocessorSpec::Scale { factor: 1.0 / 255.0 }.build("scale"),
        vec![("state", batched_f(&[2]))],
        vec![("preprocess", vec![leaf_f64(vec![1, 2], vec![255.0, 127.5])])],
    ));
    cases.push(case(
        "preprocess_clip",
        || PreprocessorSpec::Clip { low: -1.0, high: 1.0 }.build("clip"),
        vec![("state", batched_f(&[3]))],
        vec![("preprocess", vec![leaf_f64(vec![1, 3], vec![-5.0, 0.25, 5.0])])],
    ));
    cases.push(case(
        "preprocess_flatten",
        || PreprocessorSpec::Flatten.build("flatten"),
        vec![("state", batched_f(&[2, 2]))],
        vec![("preprocess", vec![sampled(&batched_f(&[2, 2]), Some(3), 7)])],
    ));
    cases.push(case(
        "preprocess_moving_average",
        || moving_average_normalize("norm", 0.1),
        vec![("state", batched_f(&[2]))],
        vec![
            ("preprocess", vec![sampled(&batched_f(&[2]), Some(4), 8)]),
            ("preprocess", vec![sampled(&batched_f(&[2]), Some(4), 9)]),
        ],
    ));
    cases.push(case(
        "preprocess_stack_scale_clip",
        || {
            preprocessor_stack(
                "prep",
                &[
                    PreprocessorSpec::Scale { factor: 2.0 },
                    PreprocessorSpec::Clip { low: -1.0, high: 1.0 },
                ],
            )
        },
        vec![("state", batched_f(&[2]))],
        vec![("preprocess", vec![leaf_f64(vec![2, 2], vec![0.3, -4.0, 0.1, 0.9])])],
    ));
    cases.push(case(
        "preprocess_stack_empty",
        || preprocessor_stack("prep", &[]),
        vec![("state", batched_f(&[2]))],
        vec![("preprocess", vec![sampled(&batched_f(&[2]), Some(2), 10)])],
    ));

    cases.push(case(
        "ring_buffer",
        || ring_buffer("ring", 8),
        vec![("records", record_space()), ("n", Space::int_box_unbounded(&[]))],
        vec![
            ("insert_records", vec![record_batch(4, 11)]),
            ("insert_records", vec![record_batch(3, 12)]),
            ("sample", vec![leaf_i64(vec![], vec![4])]),
        ],
    ));

    cases.push(case(
        "segment_tree",
        || segment_tree("segment-tree", 8),
        vec![
            ("pos", Space::int_box_unbounded(&[]).with_batch_rank(true)),
            ("masses", batched_f(&[])),
            ("p", batched_f(&[])),
            ("idx", Space::int_box_unbounded(&[]).with_batch_rank(true)),
        ],
        vec![
            (
                "write",
                vec![
                    leaf_i64(vec![4], vec![0, 1, 2, 3]),
                    leaf_f64(vec![4], vec![1.0, 2.0, 3.0, 4.0]),
                ],
            ),
            ("total", vec![]),
            ("min_mass", vec![]),
            ("locate", vec![leaf_f64(vec![3], vec![0.0, 6.5, 9.9])]),
            ("masses_at", vec![leaf_i64(vec![2], vec![1, 3])]),
        ],
    ));

    for (name, alpha) in [("prioritized_replay", 0.6), ("prioritized_replay_alpha1", 1.0)] {
        cases.push(case(
            name,
            move || {
                prioritized_replay(
                    "memory",
                    PrioritizedReplayConfig { capacity: 16, alpha, beta: 0.4, priority_floor: 1e-6 },
                )
            },
            vec![
                ("records", record_space()),
                ("n", Space::int_box_unbounded(&[])),
                ("indices", Space::int_box_unbounded(&[]).with_batch_rank(true)),
                ("abs_errors", batched_f(&[])),
            ],
            vec![
                ("insert_records", vec![record_batch(6, 13)]),
                ("sample", vec![leaf_i64(vec![], vec![4])]),
                (
                    "update_priorities",
                    vec![leaf_i64(vec![2], vec![0, 3]), leaf_f64(vec![2], vec![0.5, 2.0])],
                ),
                ("sample", vec![leaf_i64(vec![], vec![5])]),
            ],
        ));
    }

    cases.push(case(
        "prioritized_replay_nested_records",
        || prioritized_replay("memory", PrioritizedReplayConfig::default()),
        vec![
            (
                "records",
                Space::dict(vec![
                    ("obs", Space::dict(vec![
                        ("position", Space::float_box(&[2])),
                        ("sensor", Space::int_box(4)),
                    ])
                    .unwrap()),
                    ("reward", Space::float_box(&[])),
                ])
                .unwrap()
                .with_batch_rank(true),
            ),
            ("n", Space::int_box_unbounded(&[])),
            ("indices", Space::int_box_unbounded(&[]).with_batch_rank(true)),
            ("abs_errors", batched_f(&[])),
        ],
        vec![
            (
                "insert_records",
                vec![{
                    let space = Space::dict(vec![
                        ("obs", Space::dict(vec![
                            ("position", Space::float_box(&[2])),
                            ("sensor", Space::int_box(4)),
                        ])
                        .unwrap()),
                        ("reward", Space::float_box(&[])),
                    ])
                    .unwrap()
                    .with_batch_rank(true);
                    sampled(&space, Some(5), 14)
                }],
            ),
            ("sample", vec![leaf_i64(vec![], vec![3])]),
        ],
    ));

    for (name, cfg) in [
        ("dqn_loss_double", DqnLossConfig::new(0.99, true, None)),
        ("dqn_loss_single", DqnLossConfig::new(0.9, false, None)),
        ("dqn_loss_huber", DqnLossConfig::new(0.99, true, Some(1.0))),
    ] {
        let b = 4;
        cases.push(case(
            name,
            move || dqn_loss("loss", cfg),
            vec![
                ("q_s", batched_f(&[3])),
                ("q_online_s2", batched_f(&[3])),
                ("q_target_s2", batched_f(&[3])),
                ("actions", Space::int_box(3).with_batch_rank(true)),
                ("rewards", batched_f(&[])),
                ("terminals", Space::bool_box(&[]).with_batch_rank(true)),
                ("weights", batched_f(&[])),
            ],
            vec![(
                "compute",
                vec![
                    sampled(&batched_f(&[3]), Some(b), 15),
                    sampled(&batched_f(&[3]), Some(b), 16),
                    sampled(&batched_f(&[3]), Some(b), 17),
                    leaf_i64(vec![b], vec![0, 2, 1, 0]),
                    sampled(&batched_f(&[]), Some(b), 18),
                    Value::Leaf(Tensor::from_bool(vec![b], vec![false, true, false, false]).unwrap()),
                    leaf_f64(vec![b], vec![1.0, 0.5, 0.25, 1.0]),
                ],
            )],
        ));
    }

    for (name, cfg) in [
        ("optimizer_sgd", OptimizerConfig::sgd(0.05)),
        ("optimizer_adam", OptimizerConfig::adam(0.01)),
    ] {
        cases.push(case(
            name,
            move || optimizer_fixture(cfg.clone()),
            vec![("x", Space::float_box(&[]))],
            vec![
                ("update", vec![leaf_f64(vec![], vec![2.0])]),
                ("update", vec![leaf_f64(vec![], vec![-1.0])]),
                ("update", vec![leaf_f64(vec![], vec![0.5])]),
            ],
        ));
    }

    for (name, tau) in [("target_sync_hard", 1.0), ("target_sync_soft", 0.5)] {
        cases.push(case(
            name,
            move || sync_fixture(tau),
            vec![("x", Space::float_box(&[]))],
            vec![
                ("sync", vec![]),
                ("read", vec![leaf_f64(vec![], vec![0.0])]),
            ],
        ));
    }

    cases.push(case(
        "policy_discrete_dueling",
        || {
            policy(
                "policy",
                &[LayerSpec { units: 8, activation: Activation::Relu }],
                &Space::int_box(3).with_batch_rank(true),
                true,
                true,
            )
            .unwrap()
        },
        vec![("nn_input", batched_f(&[4])), ("eps", Space::float_box(&[]))],
        vec![
            ("get_q", vec![sampled(&batched_f(&[4]), Some(2), 19)]),
            (
                "get_action",
                vec![sampled(&batched_f(&[4]), Some(2), 20), leaf_f64(vec![], vec![0.3])],
            ),
            ("get_action_greedy", vec![sampled(&batched_f(&[4]), Some(2), 21)]),
        ],
    ));

    cases.push(case(
        "policy_dict_actions",
        || {
            policy(
                "policy",
                &[LayerSpec { units: 8, activation: Activation::Relu }],
                &Space::dict(vec![
                    ("discrete", Space::int_box(4)),
                    ("cont", Space::float_box(&[])),
                ])
                .unwrap()
                .with_batch_rank(true),
                false,
                true,
            )
            .unwrap()
        },
        vec![("nn_input", batched_f(&[6])), ("eps", Space::float_box(&[]))],
        vec![(
            "get_action",
            vec![sampled(&batched_f(&[6]), Some(3), 22), leaf_f64(vec![], vec![0.4])],
        )],
    ));

    cases.push(case(
        "policy_continuous_bounded",
        || {
            policy(
                "policy",
                &[LayerSpec { units: 6, activation: Activation::Tanh }],
                &Space::float_box_bounded(&[2], -1.0, 1.0).with_batch_rank(true),
                false,
                true,
            )
            .unwrap()
        },
        vec![("nn_input", batched_f(&[3])), ("eps", Space::float_box(&[]))],
        vec![(
            "get_action",
            vec![sampled(&batched_f(&[3]), Some(4), 23), leaf_f64(vec![], vec![0.0])],
        )],
    ));

    cases
}

/// One trainable scalar behind a loss, so optimizer steps are observable.
fn optimizer_fixture(cfg: OptimizerConfig) -> Component {
    let mut root = Component::new("fixture").unwrap();
    root.set_var_input_fns(&["loss_of"]);
    root.set_var_builder(Arc::new(|ctx| {
        ctx.create_var("p", Tensor::scalar_f64(1.0), true)?;
        Ok(())
    }));
    root.register_graph_fn(
        "loss_of",
        1,
        Arc::new(|ctx, args| {
            let x = args[0].leaf()?;
            let p = ctx.read_var("p")?;
            Ok(vec![ctx.mul(p, x)?.into()])
        }),
    )
    .unwrap();
    root.add_subcomponent(optimizer("optimizer", cfg, "/fixture/p")).unwrap();
    root.register_api(
        "update",
        vec![rlstage_graph::ApiParam::required("x")],
        Arc::new(|ctx, args| {
            let loss = ctx.call_graph_fn("loss_of", args)?;
            ctx.call_api("optimizer", "step", &loss)?;
            Ok(loss)
        }),
    )
    .unwrap();
    root
}

/// Two mirrored scopes plus a synchronizer and a probe that reads back the
/// target value.
fn sync_fixture(tau: f64) -> Component {
    let mut root = Component::new("fixture").unwrap();
    root.set_var_input_fns(&[]);
    root.set_var_builder(Arc::new(|ctx| {
        ctx.create_var("online/w", Tensor::scalar_f64(2.0), true)?;
        ctx.create_var("target/w", Tensor::scalar_f64(0.0), true)?;
        Ok(())
    }));
    root.add_subcomponent(target_sync("sync", "/fixture/online", "/fixture/target", tau)).unwrap();
    root.register_api("sync", vec![], Arc::new(|ctx, _| ctx.call_api("sync", "sync", &[])))
        .unwrap();
    root.register_graph_fn(
        "read_target",
        1,
        Arc::new(|ctx, args| {
            let x = args[0].leaf()?;
            let w = ctx.read_var("target/w")?;
            Ok(vec![ctx.add(w, x)?.into()])
        }),
    )
    .unwrap();
    root.register_api(
        "read",
        vec![rlstage_graph::ApiParam::required("x")],
        Arc::new(|ctx, args| ctx.call_graph_fn("read_target", args)),
    )
    .unwrap();
    root
}

/// Build and run a case under one backend; returns per-call outputs.
pub fn run_case(
    case: &ComponentCase,
    mode: BackendMode,
    seed: u64,
) -> GraphResult<Vec<Vec<Value>>> {
    let spaces: Vec<(&str, Space)> =
        case.input_spaces.iter().map(|(k, s)| (k.as_str(), s.clone())).collect();
    let mut t = ComponentTest::new((case.build)(), &spaces, mode, seed)?;
    let mut outs = Vec::new();
    for (api, args) in &case.calls {
        outs.push(t.test(api, args)?);
    }
    Ok(outs)
}

fn tensor_close(a: &Tensor, b: &Tensor, rtol: f64) -> Result<(), String> {
    if a.shape() != b.shape() || a.dtype() != b.dtype() {
        return Err(format!(
            "shape/dtype mismatch: {:?}/{} vs {:?}/{}",
            a.shape(),
            a.dtype(),
            b.shape(),
            b.dtype()
        ));
    }
    match (a.buffer(), b.buffer()) {
        (Buffer::F64(x), Buffer::F64(y)) => {
            for (i, (u, v)) in x.iter().zip(y).enumerate() {
                let denom = u.abs().max(v.abs()).max(1.0);
                if (u - v).abs() > rtol * denom {
                    return Err(format!("element {}: {} vs {}", i, u, v));
                }
            }
            Ok(())
        }
        _ => {
            if a == b {
                Ok(())
            } else {
                Err("integer/bool outputs differ".into())
            }
        }
    }
}

/// Run a case under both backends with a shared seed and compare all
/// outputs elementwise.
pub fn compare_modes(case: &ComponentCase, seed: u64, rtol: f64) -> Result<(), String> {
    let staged = run_case(case, BackendMode::Staged, seed)
        .map_err(|e| format!("{} (staged): {}", case.name, e))?;
    let dbr = run_case(case, BackendMode::DefineByRun, seed)
        .map_err(|e| format!("{} (define-by-run): {}", case.name, e))?;
    if staged.len() != dbr.len() {
        return Err(format!("{}: call counts differ", case.name));
    }
    for (ci, (a_call, b_call)) in staged.iter().zip(&dbr).enumerate() {
        if a_call.len() != b_call.len() {
            return Err(format!("{}: call {} output arity differs", case.name, ci));
        }
        for (oi, (a, b)) in a_call.iter().zip(b_call).enumerate() {
            let fa = a.flatten();
            let fb = b.flatten();
            if fa.len() != fb.len() {
                return Err(format!("{}: call {} output {} leaf counts differ", case.name, ci, oi));
            }
            for ((ka, ta), (kb, tb)) in fa.iter().zip(&fb) {
                if ka != kb {
                    return Err(format!("{}: leaf keys differ ({} vs {})", case.name, ka, kb));
                }
                tensor_close(ta, tb, rtol).map_err(|e| {
                    format!("{}: call {} output {} leaf '{}': {}", case.name, ci, oi, ka, e)
                })?;
            }
        }
    }
    Ok(())
}
