//! Replay memories.
//!
//! Both memories store one buffer variable per flat key of the record
//! space, with ring-insert semantics (a cursor that wraps at capacity). The
//! prioritized memory keeps priority masses in a segment-tree subcomponent:
//! new records enter at max(current max priority, 1.0), sampling draws n
//! leaves by stratified prefix-sum descent over priority^alpha, importance
//! weights are (size * P(i))^(-beta) normalized by the batch maximum, and
//! priority updates store |delta| + eps_p.

use std::sync::Arc;

use rlstage_core::Tensor;
use rlstage_graph::{ApiParam, Component, GraphResult, KernelArg, KernelCtx, KernelOut, TRef};

use crate::segtree::{next_pow2, segment_tree};

#[derive(Clone, Copy, Debug)]
pub struct PrioritizedReplayConfig {
    pub capacity: usize,
    pub alpha: f64,
    pub beta: f64,
    pub priority_floor: f64,
}

impl Default for PrioritizedReplayConfig {
    fn default() -> Self {
        PrioritizedReplayConfig { capacity: 1024, alpha: 0.6, beta: 0.4, priority_floor: 1e-6 }
    }
}

fn buffer_var_name(flat_key: &str) -> String {
    format!("buf{}", flat_key.replace('/', ":"))
}

fn flat_key_of_buffer(local: &str) -> String {
    local.trim_start_matches("buf").replace(':', "/")
}

/// Create the per-flat-key buffer variables plus ring bookkeeping.
fn create_record_buffers(
    ctx: &mut rlstage_graph::VarCtx<'_>,
    capacity: usize,
) -> rlstage_graph::GraphResult<()> {
    let record_space = ctx.fn_input_space("insert_rows", 0)?.clone();
    for (key, leaf) in record_space.flatten() {
        let mut shape = vec![capacity];
        shape.extend_from_slice(leaf.box_shape()?);
        ctx.create_var(&buffer_var_name(&key), Tensor::zeros(leaf.dtype()?, shape), false)?;
    }
    ctx.create_var("insert_index", Tensor::scalar_i64(0), false)?;
    ctx.create_var("size", Tensor::scalar_i64(0), false)?;
    Ok(())
}

/// Ring-write a batch of record leaves; returns the written positions.
fn insert_rows(
    ctx: &mut KernelCtx<'_>,
    arg: &KernelArg,
    capacity: usize,
) -> GraphResult<TRef> {
    let first = arg.leaves[0];
    let n = ctx.dim_size(first, 0)?;
    let cursor = ctx.read_var("insert_index")?;
    let offsets = ctx.arange_i64(n)?;
    let raw = ctx.add(offsets, cursor)?;
    let cap = ctx.scalar_i64(capacity as i64);
    let pos = ctx.mod_i64(raw, cap)?;
    for (key, leaf) in arg.pairs() {
        let name = buffer_var_name(key);
        let buf = ctx.read_var(&name)?;
        let written = ctx.scatter(buf, pos, leaf)?;
        ctx.assign_var(&name, written)?;
    }
    let new_cursor = {
        let advanced = ctx.add(cursor, n)?;
        ctx.mod_i64(advanced, cap)?
    };
    ctx.assign_var("insert_index", new_cursor)?;
    let size = ctx.read_var("size")?;
    let grown = ctx.add(size, n)?;
    let capped = ctx.minimum(grown, cap)?;
    ctx.assign_var("size", capped)?;
    Ok(ctx.mark_batch(pos, true))
}

/// Gather stored records at the given slots, re-nested by flat key.
fn fetch_rows(ctx: &mut KernelCtx<'_>, idx: TRef) -> GraphResult<KernelOut> {
    let prefix = format!("{}/buf", ctx.scope());
    let names = ctx.var_names_under(&prefix, false);
    let mut pairs = Vec::new();
    for name in names {
        let local = name.rsplit('/').next().unwrap().to_string();
        let key = flat_key_of_buffer(&local);
        let buf = ctx.read_var(&name)?;
        let rows = ctx.gather(buf, idx, 0)?;
        let rows = ctx.stop_gradient(rows)?;
        pairs.push((key, ctx.mark_batch(rows, true)));
    }
    Ok(KernelOut::Group(pairs))
}

/// Prioritized experience replay over an arbitrary record space.
pub fn prioritized_replay(name: &str, cfg: PrioritizedReplayConfig) -> Component {
    let capacity = cfg.capacity;
    let tree_capacity = next_pow2(capacity);
    let alpha = cfg.alpha;
    let beta = cfg.beta;
    let floor = cfg.priority_floor;

    let mut c = Component::new(name).expect("valid component name");
    c.add_subcomponent(segment_tree("segment-tree", tree_capacity)).unwrap();

    // Buffers are sized by the inserted record space alone; the sampling
    // functions' inputs arrive later via the segment tree (iterated
    // inference).
    c.set_var_input_fns(&["insert_rows"]);
    c.set_var_builder(Arc::new(move |ctx| {
        create_record_buffers(ctx, capacity)?;
        ctx.create_var("max_priority", Tensor::scalar_f64(1.0), false)?;
        Ok(())
    }));

    // insert_rows(records) -> (positions, masses)
    c.register_graph_fn(
        "insert_rows",
        2,
        Arc::new(move |ctx, args| {
            let pos = insert_rows(ctx, &args[0], capacity)?;
            let maxp = ctx.read_var("max_priority")?;
            let one = ctx.scalar(1.0);
            let p = ctx.maximum(maxp, one)?;
            let mass = ctx.powf(p, alpha)?;
            let posf = ctx.cast_f64(pos)?;
            let zero = ctx.scalar(0.0);
            let zeros = ctx.mul(posf, zero)?;
            let masses = ctx.add(zeros, mass)?;
            Ok(vec![pos.into(), ctx.mark_batch(masses, true).into()])
        }),
    )
    .unwrap();

    // stratify(n, total) -> prefix sums, one per sample, stratified over
    // [0, total).
    c.register_graph_fn(
        "stratify",
        1,
        Arc::new(|ctx, args| {
            let n = args[0].leaf()?;
            let total = args[1].leaf()?;
            let tiny = ctx.scalar(1e-300);
            ctx.assert_less(tiny, total, "sample drawn from an empty memory")?;
            let lanes = ctx.arange_f64(n)?;
            let u = ctx.rand_like(lanes)?;
            let jittered = ctx.add(lanes, u)?;
            let nf = ctx.cast_f64(n)?;
            let spread = ctx.div(total, nf)?;
            let p = ctx.mul(jittered, spread)?;
            // Guard the open upper bound against rounding.
            let shrink = ctx.scalar(1.0 - 1e-12);
            let limit = ctx.mul(total, shrink)?;
            let over = ctx.less(p, limit)?;
            let clamped = ctx.where_(over, p, limit)?;
            Ok(vec![ctx.mark_batch(clamped, true).into()])
        }),
    )
    .unwrap();

    c.register_graph_fn("fetch", 1, Arc::new(|ctx, args| Ok(vec![fetch_rows(ctx, args[0].leaf()?)?])))
        .unwrap();

    // weights(masses, total) -> importance weights in (0, 1], max = 1.
    c.register_graph_fn(
        "weights",
        1,
        Arc::new(move |ctx, args| {
            let masses = args[0].leaf()?;
            let total = args[1].leaf()?;
            let size = ctx.read_var("size")?;
            let sizef = ctx.cast_f64(size)?;
            let prob = ctx.div(masses, total)?;
            let x = ctx.mul(sizef, prob)?;
            let w = ctx.powf(x, -beta)?;
            let wmax = ctx.max(w, Some(0), false)?;
            let norm = ctx.div(w, wmax)?;
            Ok(vec![ctx.mark_batch(norm, true).into()])
        }),
    )
    .unwrap();

    // update_rows(idx, abs_errors) -> masses
    c.register_graph_fn(
        "update_rows",
        1,
        Arc::new(move |ctx, args| {
            let idx = args[0].leaf()?;
            let err = args[1].leaf()?;
            let size = ctx.read_var("size")?;
            let minus_one = ctx.scalar_i64(-1);
            ctx.assert_less(minus_one, idx, "negative replay slot")?;
            ctx.assert_less(idx, size, "priority update beyond stored records")?;
            let floor_c = ctx.scalar(floor);
            let p = ctx.add(err, floor_c)?;
            let maxp = ctx.read_var("max_priority")?;
            let batch_max = ctx.max(p, Some(0), false)?;
            let new_max = ctx.maximum(maxp, batch_max)?;
            ctx.assign_var("max_priority", new_max)?;
            let masses = ctx.powf(p, alpha)?;
            Ok(vec![ctx.mark_batch(masses, true).into()])
        }),
    )
    .unwrap();

    c.register_api(
        "insert_records",
        vec![ApiParam::required("records")],
        Arc::new(|ctx, args| {
            let out = ctx.call_graph_fn("insert_rows", args)?;
            ctx.call_api("segment-tree", "write", &out)?;
            Ok(vec![])
        }),
    )
    .unwrap();

    c.register_api(
        "sample",
        vec![ApiParam::required("n")],
        Arc::new(|ctx, args| {
            let total = ctx.call_api("segment-tree", "total", &[])?;
            let p = ctx.call_graph_fn("stratify", &[args[0], total[0]])?;
            let idx = ctx.call_api("segment-tree", "locate", &p)?;
            let records = ctx.call_graph_fn("fetch", &idx)?;
            let masses = ctx.call_api("segment-tree", "masses_at", &idx)?;
            let weights = ctx.call_graph_fn("weights", &[masses[0], total[0]])?;
            Ok(vec![records[0], idx[0], weights[0]])
        }),
    )
    .unwrap();

    c.register_api(
        "update_priorities",
        vec![ApiParam::required("indices"), ApiParam::required("abs_errors")],
        Arc::new(|ctx, args| {
            let masses = ctx.call_graph_fn("update_rows", args)?;
            ctx.call_api("segment-tree", "write", &[args[0], masses[0]])?;
            Ok(vec![])
        }),
    )
    .unwrap();
    c
}

/// Plain FIFO ring memory with uniform sampling.
pub fn ring_buffer(name: &str, capacity: usize) -> Component {
    let mut c = Component::new(name).expect("valid component name");
    c.set_var_input_fns(&["insert_rows"]);
    c.set_var_builder(Arc::new(move |ctx| create_record_buffers(ctx, capacity)));

    c.register_graph_fn(
        "insert_rows",
        1,
        Arc::new(move |ctx, args| {
            let pos = insert_rows(ctx, &args[0], capacity)?;
            Ok(vec![pos.into()])
        }),
    )
    .unwrap();

    c.register_graph_fn(
        "sample_rows",
        2,
        Arc::new(|ctx, args| {
            let n = args[0].leaf()?;
            let size = ctx.read_var("size")?;
            let zero = ctx.scalar_i64(0);
            ctx.assert_less(zero, size, "sample drawn from an empty memory")?;
            let lanes = ctx.arange_f64(n)?;
            let u = ctx.rand_like(lanes)?;
            let sizef = ctx.cast_f64(size)?;
            let scaled = ctx.mul(u, sizef)?;
            let idx = ctx.cast_i64(scaled)?;
            let idx = ctx.mark_batch(idx, true);
            let rows = fetch_rows(ctx, idx)?;
            Ok(vec![rows, idx.into()])
        }),
    )
    .unwrap();

    c.register_api(
        "insert_records",
        vec![ApiParam::required("records")],
        Arc::new(|ctx, args| {
            ctx.call_graph_fn("insert_rows", args)?;
            Ok(vec![])
        }),
    )
    .unwrap();
    c.register_api(
        "sample",
        vec![ApiParam::required("n")],
        Arc::new(|ctx, args| ctx.call_graph_fn("sample_rows", args)),
    )
    .unwrap();
    c
}
