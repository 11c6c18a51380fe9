//! Gradient-descent optimizers over a scope of trainable variables.
//!
//! An optimizer is bound to a variable scope prefix at composition time.
//! `step(loss)` differentiates the loss with respect to every trainable
//! variable under the prefix and applies the update in place;
//! `apply(grads)` takes externally averaged gradients (one tuple slot per
//! variable, in sorted name order) and applies the same update.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use rlstage_core::{DType, Tensor};
use rlstage_graph::{ApiParam, Component, GraphResult, KernelArg, KernelCtx, TRef};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Clone, Debug)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl OptimizerConfig {
    pub fn sgd(learning_rate: f64) -> OptimizerConfig {
        OptimizerConfig {
            kind: OptimizerKind::Sgd,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn adam(learning_rate: f64) -> OptimizerConfig {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

fn moment_name(kind: char, var_full_name: &str) -> String {
    format!("{}{}", kind, var_full_name.replace('/', "."))
}

fn apply_updates(
    ctx: &mut KernelCtx<'_>,
    cfg: &OptimizerConfig,
    pairs: &[(String, TRef)],
) -> GraphResult<()> {
    match cfg.kind {
        OptimizerKind::Sgd => {
            let lr = ctx.scalar(cfg.learning_rate);
            for (name, g) in pairs {
                let p = ctx.read_var(name)?;
                let step = ctx.mul(*g, lr)?;
                let next = ctx.sub(p, step)?;
                ctx.assign_var(name, next)?;
            }
        }
        OptimizerKind::Adam => {
            // Shared step counter with bias correction.
            let t0 = ctx.read_var("t")?;
            let one = ctx.scalar(1.0);
            let t = ctx.add(t0, one)?;
            ctx.assign_var("t", t)?;
            let log_b1 = ctx.scalar(cfg.beta1.ln());
            let log_b2 = ctx.scalar(cfg.beta2.ln());
            let b1_t = {
                let e = ctx.mul(t, log_b1)?;
                ctx.exp(e)?
            };
            let b2_t = {
                let e = ctx.mul(t, log_b2)?;
                ctx.exp(e)?
            };
            let corr1 = ctx.sub(one, b1_t)?;
            let corr2 = ctx.sub(one, b2_t)?;
            let b1 = ctx.scalar(cfg.beta1);
            let b2 = ctx.scalar(cfg.beta2);
            let omb1 = ctx.scalar(1.0 - cfg.beta1);
            let omb2 = ctx.scalar(1.0 - cfg.beta2);
            let lr = ctx.scalar(cfg.learning_rate);
            let eps = ctx.scalar(cfg.epsilon);
            for (name, g) in pairs {
                let m_name = moment_name('m', name);
                let v_name = moment_name('v', name);
                let m0 = ctx.read_var(&m_name)?;
                let v0 = ctx.read_var(&v_name)?;
                let m = {
                    let keep = ctx.mul(m0, b1)?;
                    let add = ctx.mul(*g, omb1)?;
                    ctx.add(keep, add)?
                };
                let v = {
                    let keep = ctx.mul(v0, b2)?;
                    let g2 = ctx.square(*g)?;
                    let add = ctx.mul(g2, omb2)?;
                    ctx.add(keep, add)?
                };
                ctx.assign_var(&m_name, m)?;
                ctx.assign_var(&v_name, v)?;
                let m_hat = ctx.div(m, corr1)?;
                let v_hat = ctx.div(v, corr2)?;
                let denom = {
                    let root = ctx.sqrt(v_hat)?;
                    ctx.add(root, eps)?
                };
                let step = {
                    let scaled = ctx.mul(m_hat, lr)?;
                    ctx.div(scaled, denom)?
                };
                let p = ctx.read_var(name)?;
                let next = ctx.sub(p, step)?;
                ctx.assign_var(name, next)?;
            }
        }
    }
    Ok(())
}

/// Build an optimizer bound to the trainable variables under
/// `target_prefix`. Moment state mirrors those variables under the
/// optimizer's own scope; dependency order guarantees they exist by the
/// time the optimizer's loss input has a space.
pub fn optimizer(name: &str, cfg: OptimizerConfig, target_prefix: &str) -> Component {
    let mut c = Component::new(name).expect("valid component name");
    let prefix = target_prefix.to_string();

    if cfg.kind == OptimizerKind::Adam {
        let mirror_prefix = prefix.clone();
        c.set_var_builder(Arc::new(move |ctx| {
            ctx.create_var("t", Tensor::scalar_f64(0.0), false)?;
            for (full, shape) in ctx.vars_under(&mirror_prefix, true) {
                ctx.create_var(&moment_name('m', &full), Tensor::zeros(DType::F64, shape.clone()), false)?;
                ctx.create_var(&moment_name('v', &full), Tensor::zeros(DType::F64, shape), false)?;
            }
            Ok(())
        }));
    }

    let step_cfg = cfg.clone();
    let step_prefix = prefix.clone();
    c.register_graph_fn(
        "step_from_loss",
        0,
        Arc::new(move |ctx, args| {
            let loss = args[0].leaf()?;
            let pairs = ctx.grad_by_prefix(loss, &step_prefix)?;
            apply_updates(ctx, &step_cfg, &pairs)?;
            Ok(vec![])
        }),
    )
    .unwrap();

    let apply_cfg = cfg.clone();
    let apply_prefix = prefix;
    c.register_graph_fn(
        "apply_grads",
        0,
        Arc::new(move |ctx, args| {
            let names = ctx.var_names_under(&apply_prefix, true);
            let pairs = pair_grads_by_position(&args[0], &names)?;
            apply_updates(ctx, &apply_cfg, &pairs)?;
            Ok(vec![])
        }),
    )
    .unwrap();

    c.register_api(
        "step",
        vec![ApiParam::required("loss")],
        Arc::new(|ctx, args| {
            ctx.call_graph_fn("step_from_loss", args)?;
            Ok(vec![])
        }),
    )
    .unwrap();
    c.register_api(
        "apply",
        vec![ApiParam::required("grads")],
        Arc::new(|ctx, args| {
            ctx.call_graph_fn("apply_grads", args)?;
            Ok(vec![])
        }),
    )
    .unwrap();
    c
}

/// Match tuple-grouped gradient leaves to sorted variable names. Tuple flat
/// keys sort lexicographically ("/10" before "/2"), so positions are parsed
/// from the keys rather than taken in order.
fn pair_grads_by_position(
    arg: &KernelArg,
    names: &[String],
) -> GraphResult<Vec<(String, TRef)>> {
    if arg.leaves.len() != names.len() {
        return Err(rlstage_graph::GraphError::Invalid(format!(
            "{} gradient slots for {} variables",
            arg.leaves.len(),
            names.len()
        )));
    }
    let mut out: Vec<Option<(String, TRef)>> = vec![None; names.len()];
    for (key, leaf) in arg.pairs() {
        let pos: usize = key.trim_start_matches('/').parse().map_err(|_| {
            rlstage_graph::GraphError::Invalid(format!("gradient slot key '{}' is not positional", key))
        })?;
        if pos >= names.len() {
            return Err(rlstage_graph::GraphError::Invalid(format!(
                "gradient slot {} beyond {} variables",
                pos,
                names.len()
            )));
        }
        out[pos] = Some((names[pos].clone(), leaf));
    }
    Ok(out.into_iter().map(|o| o.expect("every position filled")).collect())
}
