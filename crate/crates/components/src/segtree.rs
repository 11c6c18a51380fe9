//! Segment tree over priority masses.
//!
//! The tree is a flat array of 2*capacity slots in 1-indexed heap layout
//! (root at 1, children of i at 2i and 2i+1, leaves at capacity..2*capacity).
//! A sum tree supports total mass and prefix-sum descent; a parallel min
//! tree tracks the smallest stored mass. Writes update only the ancestor
//! paths of the touched leaves (log2(capacity) scatter rounds over the
//! batch), and the descent unrolls log2(capacity) gather/compare/select
//! rounds, so every operation is pure dataflow.

use std::sync::Arc;

use rlstage_core::Tensor;
use rlstage_graph::{ApiParam, Component, GraphResult, KernelCtx, TRef};

pub fn next_pow2(n: usize) -> usize {
    n.next_power_of_two().max(1)
}

/// Write masses at leaf slots and refresh the ancestor paths. Duplicate
/// parents recompute the same value, so later scatter writes are benign.
fn incremental_write(
    ctx: &mut KernelCtx<'_>,
    var: &str,
    leaf_slots: TRef,
    masses: TRef,
    capacity: usize,
    min_reduce: bool,
) -> GraphResult<()> {
    let levels = capacity.trailing_zeros() as usize;
    let two = ctx.scalar_i64(2);
    let one = ctx.scalar_i64(1);
    let tree0 = ctx.read_var(var)?;
    let mut tree = ctx.scatter(tree0, leaf_slots, masses)?;
    let mut current = leaf_slots;
    for _ in 0..levels {
        let parent = ctx.div(current, two)?;
        let left = ctx.mul(parent, two)?;
        let right = ctx.add(left, one)?;
        let lv = ctx.gather(tree, left, 0)?;
        let rv = ctx.gather(tree, right, 0)?;
        let pv = if min_reduce {
            let c = ctx.less(lv, rv)?;
            ctx.where_(c, lv, rv)?
        } else {
            ctx.add(lv, rv)?
        };
        tree = ctx.scatter(tree, parent, pv)?;
        current = parent;
    }
    ctx.assign_var(var, tree)
}

/// Build the segment-tree component. Capacity must be a power of two.
pub fn segment_tree(name: &str, capacity: usize) -> Component {
    assert!(capacity.is_power_of_two(), "segment tree capacity must be a power of two");
    let mut c = Component::new(name).expect("valid component name");

    // Tree arrays depend only on the capacity, never on input spaces.
    c.set_var_input_fns(&[]);
    c.set_var_builder(Arc::new(move |ctx| {
        ctx.create_var(
            "sum_tree",
            Tensor::zeros(rlstage_core::DType::F64, vec![2 * capacity]),
            false,
        )?;
        ctx.create_var("min_tree", Tensor::full_f64(vec![2 * capacity], f64::INFINITY), false)?;
        Ok(())
    }));

    // write(pos, masses): store masses at leaf positions, refresh ancestors.
    c.register_graph_fn(
        "write",
        0,
        Arc::new(move |ctx, args| {
            let pos = args[0].leaf()?;
            let masses = args[1].leaf()?;
            let cap = ctx.scalar_i64(capacity as i64);
            let slots = ctx.add(pos, cap)?;
            incremental_write(ctx, "sum_tree", slots, masses, capacity, false)?;
            incremental_write(ctx, "min_tree", slots, masses, capacity, true)?;
            Ok(vec![])
        }),
    )
    .unwrap();

    // total(): root of the sum tree as a scalar.
    c.register_graph_fn(
        "total",
        1,
        Arc::new(|ctx, _args| {
            let tree = ctx.read_var("sum_tree")?;
            let one = ctx.constant(Tensor::from_i64(vec![1], vec![1])?);
            let root = ctx.gather(tree, one, 0)?;
            Ok(vec![ctx.reshape(root, vec![])?.into()])
        }),
    )
    .unwrap();

    // min_mass(): smallest stored mass (+inf when empty).
    c.register_graph_fn(
        "min_mass",
        1,
        Arc::new(|ctx, _args| {
            let tree = ctx.read_var("min_tree")?;
            let one = ctx.constant(Tensor::from_i64(vec![1], vec![1])?);
            let root = ctx.gather(tree, one, 0)?;
            Ok(vec![ctx.reshape(root, vec![])?.into()])
        }),
    )
    .unwrap();

    // locate(p): smallest leaf index with cumulative mass > p, vectorized
    // over a batch of prefix sums in [0, total).
    let levels = capacity.trailing_zeros() as usize;
    c.register_graph_fn(
        "locate",
        1,
        Arc::new(move |ctx, args| {
            let p = args[0].leaf()?;
            let tree = ctx.read_var("sum_tree")?;
            let one_i = ctx.scalar_i64(1);
            let two_i = ctx.scalar_i64(2);
            let tiny = ctx.scalar(1e-300);
            let total = {
                let idx = ctx.constant(Tensor::from_i64(vec![1], vec![1])?);
                let root = ctx.gather(tree, idx, 0)?;
                ctx.reshape(root, vec![])?
            };
            let neg_p = ctx.neg(p)?;
            ctx.assert_less(neg_p, tiny, "prefix sum below zero")?;
            ctx.assert_less(p, total, "prefix sum must be smaller than the total mass")?;

            // idx starts at the root for every row.
            let zero = ctx.scalar(0.0);
            let zeros_f = ctx.mul(p, zero)?;
            let zeros_i = ctx.cast_i64(zeros_f)?;
            let mut idx = ctx.add(zeros_i, one_i)?;
            let mut rem = p;
            for _ in 0..levels {
                let left = ctx.mul(idx, two_i)?;
                let left_sum = ctx.gather(tree, left, 0)?;
                let go_left = ctx.less(rem, left_sum)?;
                let right = ctx.add(left, one_i)?;
                idx = ctx.where_(go_left, left, right)?;
                let rem_right = ctx.sub(rem, left_sum)?;
                rem = ctx.where_(go_left, rem, rem_right)?;
            }
            let cap = ctx.scalar_i64(capacity as i64);
            let leaf = ctx.sub(idx, cap)?;
            Ok(vec![ctx.mark_batch(leaf, true).into()])
        }),
    )
    .unwrap();

    // masses_at(idx): stored masses at leaf positions.
    c.register_graph_fn(
        "masses_at",
        1,
        Arc::new(move |ctx, args| {
            let idx = args[0].leaf()?;
            let tree = ctx.read_var("sum_tree")?;
            let cap = ctx.scalar_i64(capacity as i64);
            let slot = ctx.add(idx, cap)?;
            let m = ctx.gather(tree, slot, 0)?;
            Ok(vec![ctx.mark_batch(m, true).into()])
        }),
    )
    .unwrap();

    c.register_api(
        "write",
        vec![ApiParam::required("pos"), ApiParam::required("masses")],
        Arc::new(|ctx, args| ctx.call_graph_fn("write", args)),
    )
    .unwrap();
    c.register_api("total", vec![], Arc::new(|ctx, _| ctx.call_graph_fn("total", &[]))).unwrap();
    c.register_api("min_mass", vec![], Arc::new(|ctx, _| ctx.call_graph_fn("min_mass", &[])))
        .unwrap();
    c.register_api(
        "locate",
        vec![ApiParam::required("p")],
        Arc::new(|ctx, args| ctx.call_graph_fn("locate", args)),
    )
    .unwrap();
    c.register_api(
        "masses_at",
        vec![ApiParam::required("idx")],
        Arc::new(|ctx, args| ctx.call_graph_fn("masses_at", args)),
    )
    .unwrap();
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use rlstage_core::{Space, Value};
    use rlstage_graph::{BackendMode, ComponentTest, GraphError};

    fn harness(capacity: usize) -> ComponentTest {
        ComponentTest::new(
            segment_tree("segment-tree", capacity),
            &[
                ("pos", Space::int_box_unbounded(&[]).with_batch_rank(true)),
                ("masses", Space::float_box(&[]).with_batch_rank(true)),
                ("p", Space::float_box(&[]).with_batch_rank(true)),
                ("idx", Space::int_box_unbounded(&[]).with_batch_rank(true)),
            ],
            BackendMode::Staged,
            0,
        )
        .unwrap()
    }

    fn write(t: &mut ComponentTest, pos: Vec<i64>, masses: Vec<f64>) {
        let n = pos.len();
        t.test(
            "write",
            &[
                Value::Leaf(Tensor::from_i64(vec![n], pos).unwrap()),
                Value::Leaf(Tensor::from_f64(vec![n], masses).unwrap()),
            ],
        )
        .unwrap();
    }

    fn locate(t: &mut ComponentTest, p: f64) -> i64 {
        let out = t
            .test("locate", &[Value::Leaf(Tensor::from_f64(vec![1], vec![p]).unwrap())])
            .unwrap();
        out[0].as_leaf().unwrap().as_i64().unwrap()[0]
    }

    #[test]
    fn prefix_descent_matches_cumulative_sums() {
        let mut t = harness(4);
        write(&mut t, vec![0, 1, 2, 3], vec![1.0, 2.0, 3.0, 4.0]);
        // cumulative [1,3,6,10]
        assert_eq!(locate(&mut t, 0.0), 0);
        assert_eq!(locate(&mut t, 0.99), 0);
        assert_eq!(locate(&mut t, 1.0), 1);
        assert_eq!(locate(&mut t, 6.5), 3);
        assert_eq!(locate(&mut t, 9.999), 3);
    }

    #[test]
    fn out_of_range_prefix_is_a_runtime_error() {
        let mut t = harness(4);
        write(&mut t, vec![0, 1, 2, 3], vec![1.0, 2.0, 3.0, 4.0]);
        let err = t
            .test("locate", &[Value::Leaf(Tensor::from_f64(vec![1], vec![10.0]).unwrap())])
            .unwrap_err();
        assert!(matches!(err, GraphError::RuntimeAssert { .. }));
    }

    #[test]
    fn totals_and_minimum_track_writes() {
        let mut t = harness(8);
        write(&mut t, vec![0, 5], vec![0.5, 2.0]);
        let total = t.test("total", &[]).unwrap();
        assert_eq!(total[0].as_leaf().unwrap().scalar_as_f64().unwrap(), 2.5);
        let min = t.test("min_mass", &[]).unwrap();
        assert_eq!(min[0].as_leaf().unwrap().scalar_as_f64().unwrap(), 0.5);
        // Overwrite slot 0.
        write(&mut t, vec![0], vec![3.0]);
        let total = t.test("total", &[]).unwrap();
        assert_eq!(total[0].as_leaf().unwrap().scalar_as_f64().unwrap(), 5.0);
        let min = t.test("min_mass", &[]).unwrap();
        assert_eq!(min[0].as_leaf().unwrap().scalar_as_f64().unwrap(), 2.0);
    }

    #[test]
    fn masses_at_reads_back_leaves() {
        let mut t = harness(4);
        write(&mut t, vec![0, 1], vec![0.25, 0.75]);
        let m = t
            .test("masses_at", &[Value::Leaf(Tensor::from_i64(vec![2], vec![1, 0]).unwrap())])
            .unwrap();
        assert_eq!(m[0].as_leaf().unwrap().as_f64().unwrap(), &[0.75, 0.25]);
    }
}
