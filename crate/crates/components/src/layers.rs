//! Dense layers and layer-list networks.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use rlstage_core::Tensor;
use rlstage_graph::{ApiParam, Component, GraphResult, KernelArg, KernelCtx, TRef};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Linear,
    Relu,
    Tanh,
}

/// One entry of a declarative network architecture.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub units: usize,
    #[serde(default)]
    pub activation: Activation,
}

pub fn apply_activation(ctx: &mut KernelCtx<'_>, x: TRef, act: Activation) -> GraphResult<TRef> {
    match act {
        Activation::Linear => Ok(x),
        Activation::Relu => ctx.relu(x),
        Activation::Tanh => ctx.tanh(x),
    }
}

/// Fully connected layer: y = act(x W + b). Weight shapes derive from the
/// inferred input space; initialization is uniform in the Glorot range.
pub fn dense_layer(name: &str, units: usize, activation: Activation) -> Component {
    let mut c = Component::new(name).expect("valid component name");
    c.register_graph_fn(
        "apply",
        1,
        Arc::new(move |ctx, args: &[KernelArg]| {
            let x = args[0].leaf()?;
            let w = ctx.read_var("w")?;
            let b = ctx.read_var("b")?;
            let h = ctx.matmul(x, w)?;
            let z = ctx.add(h, b)?;
            Ok(vec![apply_activation(ctx, z, activation)?.into()])
        }),
    )
    .expect("fresh component");
    c.set_var_builder(Arc::new(move |ctx| {
        let space = ctx.fn_input_space("apply", 0)?.clone();
        let shape = space.box_shape()?;
        if shape.len() != 1 {
            return Err(rlstage_graph::GraphError::Invalid(format!(
                "dense layer '{}' needs rank-1 features, found {:?} (flatten first)",
                ctx.scope(),
                shape
            )));
        }
        let in_dim = shape[0];
        let limit = (6.0 / (in_dim + units) as f64).sqrt();
        let n = in_dim * units;
        let rng = ctx.rng();
        let data: Vec<f64> = (0..n).map(|_| rand_unit(rng) * 2.0 * limit - limit).collect();
        ctx.create_var("w", Tensor::from_f64(vec![in_dim, units], data)?, true)?;
        // Small positive offset keeps rectified units off the kink at init.
        ctx.create_var("b", Tensor::full_f64(vec![units], 0.01), true)?;
        Ok(())
    }));
    c.register_api(
        "apply",
        vec![ApiParam::required("x")],
        Arc::new(|ctx, args| ctx.call_graph_fn("apply", args)),
    )
    .expect("fresh component");
    c
}

fn rand_unit(rng: &mut rand_chacha::ChaCha8Rng) -> f64 {
    use rand::Rng;
    rng.gen::<f64>()
}

/// Layer chain assembled from a declarative spec. An empty spec is the
/// identity.
pub fn network(name: &str, layers: &[LayerSpec]) -> Component {
    let mut c = Component::new(name).expect("valid component name");
    for (i, l) in layers.iter().enumerate() {
        c.add_subcomponent(dense_layer(&format!("dense_{}", i), l.units, l.activation))
            .expect("distinct layer names");
    }
    let count = layers.len();
    c.register_api(
        "apply",
        vec![ApiParam::required("x")],
        Arc::new(move |ctx, args| {
            let mut cur = args.to_vec();
            for i in 0..count {
                cur = ctx.call_api(&format!("dense_{}", i), "apply", &cur)?;
            }
            Ok(cur)
        }),
    )
    .expect("fresh component");
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use rlstage_core::{DType, Space, Value};
    use rlstage_graph::{BackendMode, ComponentTest};

    #[test]
    fn dense_output_shape_is_batch_by_units() {
        let mut t = ComponentTest::new(
            dense_layer("dense", 8, Activation::Relu),
            &[("x", Space::float_box(&[4]).with_batch_rank(true))],
            BackendMode::Staged,
            3,
        )
        .unwrap();
        let w = t.executor().read_variable("/dense/w").unwrap();
        assert_eq!(w.shape(), &[4, 8]);
        let b = t.executor().read_variable("/dense/b").unwrap();
        assert_eq!(b.shape(), &[8]);
        let x = Value::Leaf(Tensor::zeros(DType::F64, vec![5, 4]));
        let out = t.test("apply", &[x]).unwrap();
        assert_eq!(out[0].as_leaf().unwrap().shape(), &[5, 8]);
    }

    #[test]
    fn network_chains_layers() {
        let spec = vec![
            LayerSpec { units: 6, activation: Activation::Tanh },
            LayerSpec { units: 2, activation: Activation::Linear },
        ];
        let mut t = ComponentTest::new(
            network("net", &spec),
            &[("x", Space::float_box(&[3]).with_batch_rank(true))],
            BackendMode::Staged,
            3,
        )
        .unwrap();
        let out = t
            .test("apply", &[Value::Leaf(Tensor::zeros(DType::F64, vec![2, 3]))])
            .unwrap();
        assert_eq!(out[0].as_leaf().unwrap().shape(), &[2, 2]);
    }

    #[test]
    fn rank_mismatch_is_actionable() {
        let err = ComponentTest::new(
            dense_layer("dense", 8, Activation::Linear),
            &[("x", Space::float_box(&[2, 2]).with_batch_rank(true))],
            BackendMode::Staged,
            0,
        )
        .err()
        .expect("rank-2 features must be rejected");
        assert!(format!("{}", err).contains("flatten"));
    }
}
