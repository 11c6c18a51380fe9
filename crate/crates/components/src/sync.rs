//! Weight synchronization between variable scopes.

use std::sync::Arc;

use rlstage_graph::{Component, GraphError};

/// `sync()` writes `dst <- tau * src + (1 - tau) * dst` for every variable
/// pair matched by suffix under the two prefixes; `tau = 1` is a hard copy
/// (bit-exact). The variable sets must match. The kernel resolves the pair
/// list against the whole built graph, so it materializes in the deferred
/// wave.
pub fn target_sync(name: &str, src_prefix: &str, dst_prefix: &str, tau: f64) -> Component {
    assert!(tau > 0.0 && tau <= 1.0, "tau must lie in (0, 1]");
    let mut c = Component::new(name).expect("valid component name");
    let src = src_prefix.to_string();
    let dst = dst_prefix.to_string();
    c.register_graph_fn_opts(
        "sync",
        0,
        true,
        true,
        Arc::new(move |ctx, _args| {
            let src_names = ctx.var_names_under(&src, false);
            let dst_names = ctx.var_names_under(&dst, false);
            let suffixes: Vec<String> =
                src_names.iter().map(|n| n[src.len()..].to_string()).collect();
            let dst_suffixes: Vec<String> =
                dst_names.iter().map(|n| n[dst.len()..].to_string()).collect();
            if suffixes != dst_suffixes {
                return Err(GraphError::Invalid(format!(
                    "variable sets differ between '{}' ({} vars) and '{}' ({} vars)",
                    src,
                    src_names.len(),
                    dst,
                    dst_names.len()
                )));
            }
            if src_names.is_empty() {
                return Err(GraphError::Invalid(format!("no variables under '{}'", src)));
            }
            for (s_name, d_name) in src_names.iter().zip(&dst_names) {
                let s = ctx.read_var(s_name)?;
                if (tau - 1.0).abs() == 0.0 {
                    ctx.assign_var(d_name, s)?;
                } else {
                    let d = ctx.read_var(d_name)?;
                    let t = ctx.scalar(tau);
                    let keep = ctx.scalar(1.0 - tau);
                    let a = ctx.mul(s, t)?;
                    let b = ctx.mul(d, keep)?;
                    let mixed = ctx.add(a, b)?;
                    ctx.assign_var(d_name, mixed)?;
                }
            }
            Ok(vec![])
        }),
    )
    .unwrap();
    c.register_api(
        "sync",
        vec![],
        Arc::new(|ctx, _| {
            ctx.call_graph_fn("sync", &[])?;
            Ok(vec![])
        }),
    )
    .unwrap();
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use rlstage_core::{Space, Tensor, Value};
    use rlstage_graph::{ApiParam, BackendMode, ComponentTest};

    fn harness(tau: f64) -> ComponentTest {
        let mut root = Component::new("root").unwrap();
        root.set_var_builder(Arc::new(|ctx| {
            ctx.create_var("online/w", Tensor::scalar_f64(2.0), true)?;
            ctx.create_var("target/w", Tensor::scalar_f64(0.0), true)?;
            Ok(())
        }));
        root.set_var_input_fns(&[]);
        root.add_subcomponent(target_sync("sync", "/root/online", "/root/target", tau)).unwrap();
        root.register_api("sync", vec![], Arc::new(|ctx, _| ctx.call_api("sync", "sync", &[])))
            .unwrap();
        // A dummy API that keeps one placeholder in play.
        root.register_graph_fn(
            "id",
            1,
            Arc::new(|ctx, args| {
                let x = args[0].leaf()?;
                Ok(vec![ctx.stop_gradient(x)?.into()])
            }),
        )
        .unwrap();
        root.register_api(
            "id",
            vec![ApiParam::required("x")],
            Arc::new(|ctx, args| ctx.call_graph_fn("id", args)),
        )
        .unwrap();
        ComponentTest::new(root, &[("x", Space::float_box(&[]))], BackendMode::Staged, 0).unwrap()
    }

    #[test]
    fn hard_copy_is_bit_exact() {
        let mut t = harness(1.0);
        t.test("sync", &[]).unwrap();
        let dst = t.executor().read_variable("/root/target/w").unwrap();
        assert_eq!(dst.scalar_as_f64().unwrap().to_bits(), 2.0f64.to_bits());
    }

    #[test]
    fn soft_update_interpolates() {
        let mut t = harness(0.5);
        t.test("sync", &[]).unwrap();
        let dst = t.executor().read_variable("/root/target/w").unwrap();
        assert_eq!(dst.scalar_as_f64().unwrap(), 1.0);
        let _ = Value::Leaf(Tensor::scalar_f64(0.0));
    }

    #[test]
    fn mismatched_variable_sets_error() {
        let mut root = Component::new("root").unwrap();
        root.set_var_builder(Arc::new(|ctx| {
            ctx.create_var("online/w", Tensor::scalar_f64(2.0), true)?;
            ctx.create_var("online/b", Tensor::scalar_f64(1.0), true)?;
            ctx.create_var("target/w", Tensor::scalar_f64(0.0), true)?;
            Ok(())
        }));
        root.set_var_input_fns(&[]);
        root.add_subcomponent(target_sync("sync", "/root/online", "/root/target", 1.0)).unwrap();
        root.register_api("sync", vec![], Arc::new(|ctx, _| ctx.call_api("sync", "sync", &[])))
            .unwrap();
        let err = ComponentTest::new(root, &[], BackendMode::Staged, 0).err().unwrap();
        assert!(format!("{}", err).contains("variable sets differ"));
    }
}
