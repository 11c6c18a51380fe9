//! DQN agent composition: preprocessor -> policy (network + dueling +
//! exploration) -> memory -> loss -> optimizer -> target synchronizer,
//! wired under a single root whose registered API methods form the agent's
//! external interface.
//!
//! The root builds in three shapes: the full learner+actor graph, an
//! act-only graph for sample collectors, and a learner-only graph that
//! updates from external batches (shared replay shards). Policy scopes are
//! identical across shapes so weight snapshots transfer between them.

use std::sync::Arc;

use indexmap::IndexMap;
use rlstage_components::{
    dqn_loss, optimizer, policy, preprocessor_stack, prioritized_replay, target_sync,
    DqnLossConfig, OptimizerConfig, OptimizerKind, PrioritizedReplayConfig,
};
use rlstage_core::Space;
use rlstage_graph::{
    build_meta_graph, ApiCtx, ApiParam, Component, ComponentGraph, DeviceMap, GraphError,
    GraphResult, KernelOut, Rec,
};

use crate::config::{AgentConfig, DeviceTarget};

pub const ROOT: &str = "agent";
pub const POLICY_SCOPE: &str = "/agent/policy";
pub const TARGET_SCOPE: &str = "/agent/target_policy";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AgentMode {
    /// Acting, observing, and updating from the internal memory.
    Full,
    /// Acting only (sample collectors).
    ActOnly,
    /// Updating from external batches plus target sync (learners fed by
    /// shared replay shards).
    Learner,
}

/// Number of action categories of a single-leaf categorical space.
pub fn action_categories(space: &Space) -> GraphResult<usize> {
    match space {
        Space::IntBox { num_categories: Some(n), shape, .. } if shape.is_empty() => Ok(*n),
        other => Err(GraphError::Invalid(format!(
            "this agent needs a scalar categorical action space, found {:?}",
            other
        ))),
    }
}

fn unranked(space: &Space) -> Space {
    space.clone().with_batch_rank(false).with_time_rank(false)
}

/// Stored-transition layout: state, action, n-step reward, bootstrap state,
/// terminal flag.
pub fn record_space(cfg: &AgentConfig) -> GraphResult<Space> {
    let state = unranked(&cfg.state_space.build()?);
    let actions = action_categories(&cfg.action_space.build()?)?;
    Ok(Space::dict(vec![
        ("state", state.clone()),
        ("action", Space::int_box(actions)),
        ("reward", Space::float_box(&[])),
        ("next_state", state),
        ("terminal", Space::bool_box(&[])),
    ])?
    .with_batch_rank(true))
}

/// Input spaces for every API parameter, keyed by parameter name.
pub fn input_spaces(cfg: &AgentConfig) -> GraphResult<IndexMap<String, Space>> {
    let mut map = IndexMap::new();
    map.insert("states".to_string(), cfg.state_space.build()?.with_batch_rank(true));
    map.insert("eps".to_string(), Space::float_box(&[]));
    map.insert("records".to_string(), record_space(cfg)?);
    map.insert("n".to_string(), Space::int_box_unbounded(&[]));
    map.insert("weights".to_string(), Space::float_box(&[]).with_batch_rank(true));
    Ok(map)
}

pub fn device_map(cfg: &AgentConfig) -> GraphResult<DeviceMap> {
    let mut map = DeviceMap::new("cpu:0");
    for rule in &cfg.devices {
        match rule.target {
            DeviceTarget::Ops => map.add_op_rule(&rule.scope, &rule.device)?,
            DeviceTarget::Vars => map.add_var_rule(&rule.scope, &rule.device)?,
            DeviceTarget::Both => {
                map.add_op_rule(&rule.scope, &rule.device)?;
                map.add_var_rule(&rule.scope, &rule.device)?;
            }
        }
    }
    Ok(map)
}

/// Loss pipeline on one (sub-)batch: preprocess stored states, evaluate
/// online and target action values, and hand everything to the loss
/// component. Returns (loss, |td|).
fn loss_on_batch(ctx: &mut ApiCtx<'_>, records: Rec, weights: Rec) -> GraphResult<(Rec, Rec)> {
    let s = ctx.get_item(records, "state")?;
    let a = ctx.get_item(records, "action")?;
    let r = ctx.get_item(records, "reward")?;
    let s2 = ctx.get_item(records, "next_state")?;
    let t = ctx.get_item(records, "terminal")?;
    let ps = ctx.call_api("preprocessor", "preprocess", &[s])?;
    let ps2 = ctx.call_api("preprocessor", "preprocess", &[s2])?;
    let q_s = ctx.call_api("policy", "get_q", &ps)?;
    let q_on2 = ctx.call_api("policy", "get_q", &ps2)?;
    let q_tg2 = ctx.call_api("target_policy", "get_q", &ps2)?;
    let out = ctx.call_api(
        "loss",
        "compute",
        &[q_s[0], q_on2[0], q_tg2[0], a, r, t, weights],
    )?;
    Ok((out[0], out[1]))
}

/// Compute the loss and apply the optimizer, splitting across replicas when
/// configured. Returns (loss, |td| over the whole batch).
fn update_path(
    ctx: &mut ApiCtx<'_>,
    records: Rec,
    weights: Rec,
    replicas: usize,
) -> GraphResult<(Rec, Rec)> {
    if replicas == 1 {
        let (loss, td) = loss_on_batch(ctx, records, weights)?;
        ctx.call_api("optimizer", "step", &[loss])?;
        return Ok((loss, td));
    }
    let mut losses = Vec::new();
    let mut tds = Vec::new();
    let mut grads = Vec::new();
    for i in 0..replicas {
        let label = format!("replica:{}", i);
        let (loss_i, td_i, grads_i) = ctx.with_device(&label, |ctx| {
            let parts = ctx.call_graph_fn(&format!("slice_{}", i), &[records, weights])?;
            let (loss_i, td_i) = loss_on_batch(ctx, parts[0], parts[1])?;
            let grads_i = ctx.call_graph_fn("grads_of", &[loss_i])?;
            Ok((loss_i, td_i, grads_i[0]))
        })?;
        losses.push(loss_i);
        tds.push(td_i);
        grads.push(grads_i);
    }
    let averaged = ctx.call_graph_fn("average_grads", &grads)?;
    ctx.call_api("optimizer", "apply", &averaged)?;
    let loss = ctx.call_graph_fn("mean_scalars", &losses)?[0];
    let td = ctx.call_graph_fn("concat_rows", &tds)?[0];
    Ok((loss, td))
}

/// Register the root graph functions backing replica expansion.
fn register_replica_fns(root: &mut Component, replicas: usize) -> GraphResult<()> {
    for i in 0..replicas {
        let k = replicas;
        root.register_graph_fn(
            &format!("slice_{}", i),
            2,
            Arc::new(move |ctx, args| {
                let w = args[1].leaf()?;
                let n = ctx.dim_size(args[0].leaves[0], 0)?;
                let k_c = ctx.scalar_i64(k as i64);
                let per = ctx.div(n, k_c)?;
                let covered = ctx.mul(per, k_c)?;
                let deficit = ctx.sub(n, covered)?;
                let one = ctx.scalar_i64(1);
                ctx.assert_less(deficit, one, "batch not divisible by the replica count")?;
                let i_c = ctx.scalar_i64(i as i64);
                let start = ctx.mul(per, i_c)?;
                let lane = ctx.arange_i64(per)?;
                let idx = ctx.add(lane, start)?;
                let mut pairs = Vec::new();
                let arg = &args[0];
                for (key, leaf) in arg.pairs() {
                    let rows = ctx.gather(leaf, idx, 0)?;
                    pairs.push((key.to_string(), ctx.mark_batch(rows, true)));
                }
                let sw = ctx.gather(w, idx, 0)?;
                Ok(vec![KernelOut::Group(pairs), ctx.mark_batch(sw, true).into()])
            }),
        )?;
    }
    root.register_graph_fn(
        "grads_of",
        1,
        Arc::new(|ctx, args| {
            let loss = args[0].leaf()?;
            let pairs = ctx.grad_by_prefix(loss, POLICY_SCOPE)?;
            let group = pairs
                .into_iter()
                .enumerate()
                .map(|(i, (_, g))| (format!("/{}", i), g))
                .collect();
            Ok(vec![KernelOut::Group(group)])
        }),
    )?;
    let k = replicas;
    root.register_graph_fn(
        "average_grads",
        1,
        Arc::new(move |ctx, args| {
            let scale = ctx.scalar(1.0 / k as f64);
            let mut pairs = Vec::new();
            for slot in 0..args[0].leaves.len() {
                let mut acc = args[0].leaves[slot];
                for arg in &args[1..] {
                    acc = ctx.add(acc, arg.leaves[slot])?;
                }
                let avg = ctx.mul(acc, scale)?;
                pairs.push((args[0].keys[slot].clone(), avg));
            }
            Ok(vec![KernelOut::Group(pairs)])
        }),
    )?;
    root.register_graph_fn(
        "mean_scalars",
        1,
        Arc::new(move |ctx, args| {
            let mut acc = args[0].leaf()?;
            for arg in &args[1..] {
                let l = arg.leaf()?;
                acc = ctx.add(acc, l)?;
            }
            let scale = ctx.scalar(1.0 / k as f64);
            Ok(vec![ctx.mul(acc, scale)?.into()])
        }),
    )?;
    root.register_graph_fn(
        "concat_rows",
        1,
        Arc::new(|ctx, args| {
            let leaves: Vec<_> = args.iter().map(|a| a.leaves[0]).collect();
            let joined = ctx.concat(&leaves, 0)?;
            Ok(vec![ctx.mark_batch(joined, true).into()])
        }),
    )?;
    Ok(())
}

/// Compose the agent's root component for a mode.
pub fn compose_dqn(cfg: &AgentConfig, mode: AgentMode) -> GraphResult<Component> {
    compose_dqn_with_replicas(cfg, mode, cfg.update.replica_count)
}

fn compose_dqn_with_replicas(
    cfg: &AgentConfig,
    mode: AgentMode,
    replicas: usize,
) -> GraphResult<Component> {
    cfg.validate().map_err(|e| GraphError::Invalid(e.to_string()))?;
    let action_space = cfg.action_space.build()?.with_batch_rank(true);
    action_categories(&cfg.action_space.build()?)?;

    let mut root = Component::new(ROOT)?;
    // The root owns helper graph functions but no variables.
    root.set_var_input_fns(&[]);
    root.add_subcomponent(preprocessor_stack("preprocessor", &cfg.preprocessors))?;
    root.add_subcomponent(policy("policy", &cfg.network, &action_space, cfg.dueling, true)?)?;

    let act_only = mode == AgentMode::ActOnly;
    if !act_only {
        root.add_subcomponent(policy(
            "target_policy",
            &cfg.network,
            &action_space,
            cfg.dueling,
            false,
        )?)?;
        let discount = cfg.update.gamma.powi(cfg.update.n_step as i32);
        root.add_subcomponent(dqn_loss(
            "loss",
            DqnLossConfig::new(discount, cfg.update.double_q, cfg.update.huber_delta),
        ))?;
        let opt_cfg = match cfg.update.optimizer {
            OptimizerKind::Sgd => OptimizerConfig::sgd(cfg.update.learning_rate),
            OptimizerKind::Adam => OptimizerConfig::adam(cfg.update.learning_rate),
        };
        root.add_subcomponent(optimizer("optimizer", opt_cfg, POLICY_SCOPE))?;
        root.add_subcomponent(target_sync("synchronizer", POLICY_SCOPE, TARGET_SCOPE, 1.0))?;
        if replicas > 1 {
            register_replica_fns(&mut root, replicas)?;
        }
    }
    if mode == AgentMode::Full {
        root.add_subcomponent(prioritized_replay(
            "memory",
            PrioritizedReplayConfig {
                capacity: cfg.memory.capacity,
                alpha: cfg.memory.alpha,
                beta: cfg.memory.beta,
                priority_floor: 1e-6,
            },
        ))?;
    }

    // Acting entry points.
    if mode != AgentMode::Learner {
        root.register_api(
            "act",
            vec![ApiParam::required("states"), ApiParam::required("eps")],
            Arc::new(|ctx, args| {
                let p = ctx.call_api("preprocessor", "preprocess", &[args[0]])?;
                ctx.call_api("policy", "get_action", &[p[0], args[1]])
            }),
        )?;
        root.register_api(
            "act_greedy",
            vec![ApiParam::required("states")],
            Arc::new(|ctx, args| {
                let p = ctx.call_api("preprocessor", "preprocess", &[args[0]])?;
                ctx.call_api("policy", "get_action_greedy", &p)
            }),
        )?;
        root.register_api(
            "act_raw",
            vec![ApiParam::required("states"), ApiParam::required("eps")],
            Arc::new(|ctx, args| ctx.call_api("policy", "get_action", &[args[0], args[1]])),
        )?;
        root.register_api(
            "act_greedy_raw",
            vec![ApiParam::required("states")],
            Arc::new(|ctx, args| ctx.call_api("policy", "get_action_greedy", args)),
        )?;
        root.register_api(
            "get_q",
            vec![ApiParam::required("states")],
            Arc::new(|ctx, args| {
                let p = ctx.call_api("preprocessor", "preprocess", &[args[0]])?;
                ctx.call_api("policy", "get_q", &p)
            }),
        )?;
    }

    if mode == AgentMode::Full {
        root.register_api(
            "insert",
            vec![ApiParam::required("records")],
            Arc::new(|ctx, args| {
                ctx.call_api("memory", "insert_records", args)?;
                Ok(vec![])
            }),
        )?;
        let k = replicas;
        root.register_api(
            "update_from_memory",
            vec![ApiParam::required("n")],
            Arc::new(move |ctx, args| {
                let sampled = ctx.call_api("memory", "sample", args)?;
                let (loss, td) = update_path(ctx, sampled[0], sampled[2], k)?;
                ctx.call_api("memory", "update_priorities", &[sampled[1], td])?;
                Ok(vec![loss, sampled[1], td])
            }),
        )?;
    }
    if !act_only {
        let k = replicas;
        root.register_api(
            "update_from_batch",
            vec![ApiParam::required("records"), ApiParam::required("weights")],
            Arc::new(move |ctx, args| {
                let (loss, td) = update_path(ctx, args[0], args[1], k)?;
                Ok(vec![loss, td])
            }),
        )?;
        root.register_api(
            "sync_target",
            vec![],
            Arc::new(|ctx, _| {
                ctx.call_api("synchronizer", "sync", &[])?;
                Ok(vec![])
            }),
        )?;
    }
    Ok(root)
}

/// Assemble the meta-graph for a composed agent.
pub fn assemble(cfg: &AgentConfig, mode: AgentMode) -> GraphResult<ComponentGraph> {
    let spaces = input_spaces(cfg)?;
    build_meta_graph(compose_dqn(cfg, mode)?, &spaces)
}

/// Expand the update subgraph into `k` replicas that each process one
/// contiguous equal slice of the batch, with gradients averaged before the
/// optimizer step. Components are modified before the build (no variables
/// or placeholders exist yet), then the meta-graph is re-assembled; `k = 1`
/// returns the unexpanded graph.
pub fn apply_replica_strategy(cfg: &AgentConfig, k: usize) -> GraphResult<ComponentGraph> {
    if k < 1 {
        return Err(GraphError::Invalid("replica count must be at least 1".into()));
    }
    let spaces = input_spaces(cfg)?;
    build_meta_graph(compose_dqn_with_replicas(cfg, AgentMode::Full, k)?, &spaces)
}
