//! State preprocessors and the ordered preprocessor stack.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use rlstage_core::{DType, Tensor};
use rlstage_graph::{ApiParam, Component};

/// Declarative preprocessor entries for agent configs.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum PreprocessorSpec {
    Scale { factor: f64 },
    Clip { low: f64, high: f64 },
    Flatten,
    MovingAverageNormalize {
        #[serde(default = "default_momentum")]
        momentum: f64,
    },
}

fn default_momentum() -> f64 {
    0.01
}

impl PreprocessorSpec {
    pub fn build(&self, name: &str) -> Component {
        match self {
            PreprocessorSpec::Scale { factor } => scale(name, *factor),
            PreprocessorSpec::Clip { low, high } => clip(name, *low, *high),
            PreprocessorSpec::Flatten => flatten(name),
            PreprocessorSpec::MovingAverageNormalize { momentum } => {
                moving_average_normalize(name, *momentum)
            }
        }
    }
}

fn unary_preprocessor(
    name: &str,
    kernel: rlstage_graph::Kernel,
) -> Component {
    let mut c = Component::new(name).expect("valid component name");
    c.register_graph_fn("apply", 1, kernel).unwrap();
    c.register_api(
        "preprocess",
        vec![ApiParam::required("state")],
        Arc::new(|ctx, args| ctx.call_graph_fn("apply", args)),
    )
    .unwrap();
    c
}

/// Multiply by a constant (e.g. 1/255 for byte images).
pub fn scale(name: &str, factor: f64) -> Component {
    unary_preprocessor(
        name,
        Arc::new(move |ctx, args| {
            let x = args[0].leaf()?;
            let f = ctx.scalar(factor);
            Ok(vec![ctx.mul(x, f)?.into()])
        }),
    )
}

/// Clamp into [low, high].
pub fn clip(name: &str, low: f64, high: f64) -> Component {
    unary_preprocessor(
        name,
        Arc::new(move |ctx, args| {
            let x = args[0].leaf()?;
            Ok(vec![ctx.clip(x, Some(low), Some(high))?.into()])
        }),
    )
}

/// Collapse all non-ranked dims into one feature axis.
pub fn flatten(name: &str) -> Component {
    unary_preprocessor(
        name,
        Arc::new(|ctx, args| {
            let x = args[0].leaf()?;
            let tail: usize = ctx.tail_shape(x).iter().product();
            let (batch, time) = ctx.batch_time_flags(x);
            let mut spec: Vec<isize> = Vec::new();
            if batch || time {
                spec.push(-1);
            }
            if batch && time {
                // Fold handled separately; flatten keeps one leading axis.
                return Err(rlstage_graph::GraphError::Invalid(
                    "flatten expects at most one ranked leading dim; fold time first".into(),
                ));
            }
            spec.push(tail as isize);
            Ok(vec![ctx.reshape(x, spec)?.into()])
        }),
    )
}

/// Normalize by running mean/variance, updated from each batch with the
/// given momentum.
pub fn moving_average_normalize(name: &str, momentum: f64) -> Component {
    let mut c = Component::new(name).expect("valid component name");
    c.register_graph_fn(
        "apply",
        1,
        Arc::new(move |ctx, args| {
            let x = args[0].leaf()?;
            let mu = ctx.read_var("mean")?;
            let var = ctx.read_var("var")?;
            let eps = ctx.scalar(1e-6);
            let var_eps = ctx.add(var, eps)?;
            let sd = ctx.sqrt(var_eps)?;
            let centered = ctx.sub(x, mu)?;
            let y = ctx.div(centered, sd)?;

            let (has_batch, _) = ctx.batch_time_flags(x);
            let (batch_mean, batch_sq) = if has_batch {
                let m = ctx.mean(x, Some(0), false)?;
                let d = ctx.sub(x, mu)?;
                let d2 = ctx.square(d)?;
                (m, ctx.mean(d2, Some(0), false)?)
            } else {
                let d = ctx.sub(x, mu)?;
                (x, ctx.square(d)?)
            };
            let m = ctx.scalar(momentum);
            let keep = ctx.scalar(1.0 - momentum);
            let mu_part = ctx.mul(mu, keep)?;
            let mb_part = ctx.mul(batch_mean, m)?;
            let mu_new = ctx.add(mu_part, mb_part)?;
            ctx.assign_var("mean", mu_new)?;
            let var_part = ctx.mul(var, keep)?;
            let vb_part = ctx.mul(batch_sq, m)?;
            let var_new = ctx.add(var_part, vb_part)?;
            ctx.assign_var("var", var_new)?;
            Ok(vec![y.into()])
        }),
    )
    .unwrap();
    c.set_var_builder(Arc::new(|ctx| {
        let space = ctx.fn_input_space("apply", 0)?.clone();
        let tail = space.box_shape()?.to_vec();
        ctx.create_var("mean", Tensor::zeros(DType::F64, tail.clone()), false)?;
        ctx.create_var("var", Tensor::full_f64(tail, 1.0), false)?;
        Ok(())
    }));
    c.register_api(
        "preprocess",
        vec![ApiParam::required("state")],
        Arc::new(|ctx, args| ctx.call_graph_fn("apply", args)),
    )
    .unwrap();
    c
}

/// Ordered stack of preprocessors; an empty stack is the identity.
pub fn preprocessor_stack(name: &str, specs: &[PreprocessorSpec]) -> Component {
    let mut c = Component::new(name).expect("valid component name");
    for (i, spec) in specs.iter().enumerate() {
        c.add_subcomponent(spec.build(&format!("op_{}", i))).unwrap();
    }
    let count = specs.len();
    c.register_api(
        "preprocess",
        vec![ApiParam::required("state")],
        Arc::new(move |ctx, args| {
            let mut cur = args.to_vec();
            for i in 0..count {
                cur = ctx.call_api(&format!("op_{}", i), "preprocess", &cur)?;
            }
            Ok(cur)
        }),
    )
    .unwrap();
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use rlstage_core::{Space, Value};
    use rlstage_graph::{BackendMode, ComponentTest};

    fn run_stack(
        specs: &[PreprocessorSpec],
        space: Space,
        input: Value,
    ) -> Value {
        let mut t = ComponentTest::new(
            preprocessor_stack("prep", specs),
            &[("state", space)],
            BackendMode::Staged,
            0,
        )
        .unwrap();
        t.test("preprocess", &[input]).unwrap().remove(0)
    }

    #[test]
    fn scale_by_inverse_255() {
        let out = run_stack(
            &[PreprocessorSpec::Scale { factor: 1.0 / 255.0 }],
            Space::float_box(&[1]).with_batch_rank(true),
            Value::Leaf(Tensor::from_f64(vec![1, 1], vec![255.0]).unwrap()),
        );
        assert_eq!(out.as_leaf().unwrap().as_f64().unwrap(), &[1.0]);
    }

    #[test]
    fn flatten_collapses_features() {
        let out = run_stack(
            &[PreprocessorSpec::Flatten],
            Space::float_box(&[2, 2]).with_batch_rank(true),
            Value::Leaf(Tensor::from_f64(vec![3, 2, 2], (0..12).map(|i| i as f64).collect()).unwrap()),
        );
        assert_eq!(out.as_leaf().unwrap().shape(), &[3, 4]);
    }

    #[test]
    fn empty_stack_is_identity() {
        let x = Value::Leaf(Tensor::from_f64(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let out = run_stack(
            &[],
            Space::float_box(&[2]).with_batch_rank(true),
            x.clone(),
        );
        assert_eq!(out, x);
    }

    #[test]
    fn clip_bounds_applied_mid_stack() {
        let out = run_stack(
            &[
                PreprocessorSpec::Scale { factor: 2.0 },
                PreprocessorSpec::Clip { low: -1.0, high: 1.0 },
            ],
            Space::float_box(&[2]).with_batch_rank(true),
            Value::Leaf(Tensor::from_f64(vec![1, 2], vec![0.3, -4.0]).unwrap()),
        );
        assert_eq!(out.as_leaf().unwrap().as_f64().unwrap(), &[0.6, -1.0]);
    }

    #[test]
    fn moving_average_tracks_batches() {
        let mut t = ComponentTest::new(
            moving_average_normalize("norm", 0.5),
            &[("state", Space::float_box(&[1]).with_batch_rank(true))],
            BackendMode::Staged,
            0,
        )
        .unwrap();
        let x = Value::Leaf(Tensor::from_f64(vec![2, 1], vec![4.0, 4.0]).unwrap());
        t.test("preprocess", &[x]).unwrap();
        let mu = t.executor().read_variable("/norm/mean").unwrap();
        assert_eq!(mu.as_f64().unwrap(), &[2.0]);
    }
}
