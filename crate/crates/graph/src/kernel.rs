//! The kernel context: the single surface graph functions are written
//! against.
//!
//! A kernel runs in three situations. During a staged build it is traced
//! once per call site: every operation is recorded as a staged node while
//! zero-filled probe tensors flow through for shape inference. During a
//! define-by-run build the same probes flow through without recording
//! (variable writes are validated but suppressed in both build modes).
//! During define-by-run execution the kernel runs eagerly on real tensors,
//! appending to the call-wide tape so gradients can flow across component
//! boundaries.
//!
//! Handles carry batch/time flags alongside the probe shape; spaces for
//! kernel outputs are derived from both.

use std::collections::HashMap;

use indexmap::IndexMap;
use rand_chacha::ChaCha8Rng;
use rlstage_core::{
    backward, eval_kernel_op, Attrs, DType, KernelOp, OpCode, TapeEntry, Tensor,
};

use crate::error::{GraphError, GraphResult};

/// Handle to a value flowing through a graph function.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TRef(pub(crate) usize);

/// One kernel output: a bare leaf or a group of named leaves that re-nests
/// into a container record (flat keys; numeric segments mean tuple slots).
pub enum KernelOut {
    Leaf(TRef),
    Group(Vec<(String, TRef)>),
}

impl From<TRef> for KernelOut {
    fn from(h: TRef) -> KernelOut {
        KernelOut::Leaf(h)
    }
}

/// One kernel argument: the flattened leaves of an op record together with
/// their flat keys ("" for a bare box).
pub struct KernelArg {
    pub keys: Vec<String>,
    pub leaves: Vec<TRef>,
}

impl KernelArg {
    /// The single leaf of a box-spaced argument.
    pub fn leaf(&self) -> GraphResult<TRef> {
        if self.leaves.len() != 1 {
            return Err(GraphError::Invalid(format!(
                "expected a single-leaf argument, found {} leaves",
                self.leaves.len()
            )));
        }
        Ok(self.leaves[0])
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&str, TRef)> {
        self.keys.iter().map(String::as_str).zip(self.leaves.iter().copied())
    }
}

pub type NodeId = usize;

/// Operations in the staged node table.
#[derive(Clone, Debug)]
pub enum NodeOp {
    Placeholder { key: String },
    Const(usize),
    VarRead(String),
    /// Write the input value into the named variable; passes the value through.
    VarAssign(String),
    Kernel(KernelOp, Attrs),
    /// Gradients of a scalar input with respect to named variables; results
    /// are fetched through `GradOut` nodes.
    Grad { wrt: Vec<String> },
    GradOut { slot: usize },
    /// Runtime check `a < b` elementwise; evaluation fails otherwise.
    AssertLess { scope: String, msg: String },
}

#[derive(Clone, Debug)]
pub struct StagedNode {
    pub op: NodeOp,
    pub inputs: Vec<NodeId>,
    pub device: String,
}

/// Node table under construction (staged mode).
#[derive(Default)]
pub struct StagedSink {
    pub nodes: Vec<StagedNode>,
    pub constants: Vec<Tensor>,
}

impl StagedSink {
    pub fn push(&mut self, op: NodeOp, inputs: Vec<NodeId>, device: &str) -> NodeId {
        self.nodes.push(StagedNode { op, inputs, device: device.to_string() });
        self.nodes.len() - 1
    }

    pub fn push_const(&mut self, t: Tensor, device: &str) -> NodeId {
        self.constants.push(t);
        self.push(NodeOp::Const(self.constants.len() - 1), vec![], device)
    }
}

/// A variable slot: current value plus build-time metadata.
#[derive(Clone, Debug)]
pub struct VarSlot {
    pub value: Tensor,
    pub trainable: bool,
    pub device: String,
}

pub type VarStore = IndexMap<String, VarSlot>;

#[derive(Clone, Copy, PartialEq, Eq)]
pub(crate) enum CtxMode {
    /// Staged build: record nodes, suppress writes and checks.
    TraceStaged,
    /// Define-by-run build: infer shapes only.
    TraceInfer,
    /// Define-by-run execution: real values, real effects.
    Eval,
}

pub struct KernelCtx<'a> {
    pub(crate) mode: CtxMode,
    pub(crate) scope: String,
    pub(crate) device: String,
    pub(crate) values: &'a mut Vec<Tensor>,
    pub(crate) flags: &'a mut Vec<(bool, bool)>,
    pub(crate) entries: &'a mut Vec<TapeEntry>,
    pub(crate) node_of: &'a mut Vec<Option<NodeId>>,
    pub(crate) staged: Option<&'a mut StagedSink>,
    pub(crate) vars: &'a mut VarStore,
    pub(crate) rng: &'a mut ChaCha8Rng,
    /// Value slots at which each variable was read (gradient seeds).
    pub(crate) var_reads: &'a mut HashMap<String, Vec<usize>>,
    /// Effect nodes (writes, checks) recorded by this trace.
    pub(crate) effects: &'a mut Vec<NodeId>,
}

fn drop_flag(flags: (bool, bool), axis: usize) -> (bool, bool) {
    let (b, t) = flags;
    match axis {
        0 => {
            if b {
                (false, t)
            } else {
                (b, false)
            }
        }
        1 => (b, false),
        _ => flags,
    }
}

fn reduce_flags(flags: (bool, bool), attrs: &Attrs, in_rank: usize) -> (bool, bool) {
    match attrs.axis {
        None => {
            if attrs.keep_dims {
                flags
            } else {
                (false, false)
            }
        }
        Some(ax) => {
            let a = if ax < 0 { (ax + in_rank as isize).max(0) as usize } else { ax as usize };
            let nb = flags.0 as usize + flags.1 as usize;
            if !attrs.keep_dims && a < nb {
                drop_flag(flags, a)
            } else {
                flags
            }
        }
    }
}

fn out_flags(op: &KernelOp, attrs: &Attrs, ins: &[(bool, bool)], in_ranks: &[usize]) -> (bool, bool) {
    let or2 = |a: (bool, bool), b: (bool, bool)| (a.0 || b.0, a.1 || b.1);
    match op {
        KernelOp::Prim(p) => match p {
            OpCode::Sum | OpCode::Mean | OpCode::Max | OpCode::ArgMax => {
                reduce_flags(ins[0], attrs, in_ranks[0])
            }
            OpCode::Gather => {
                let a = attrs.axis.unwrap_or(0);
                let a = if a < 0 { (a + in_ranks[0] as isize).max(0) as usize } else { a as usize };
                if a == 0 {
                    ins[1]
                } else {
                    ins[0]
                }
            }
            OpCode::MatMul => ins[0],
            OpCode::Concat => ins.iter().copied().fold((false, false), or2),
            OpCode::Add | OpCode::Sub | OpCode::Mul | OpCode::Div | OpCode::Less => {
                or2(ins[0], ins[1])
            }
            OpCode::Where => or2(or2(ins[0], ins[1]), ins[2]),
            _ => ins[0],
        },
        KernelOp::Scatter => ins[0],
        KernelOp::Arange(_) | KernelOp::DimSize(_) => (false, false),
        KernelOp::Cast(_) | KernelOp::RandUniform => ins[0],
    }
}

impl<'a> KernelCtx<'a> {
    pub(crate) fn full_name(&self, local: &str) -> String {
        if local.starts_with('/') {
            local.to_string()
        } else {
            format!("{}/{}", self.scope, local)
        }
    }

    pub fn scope(&self) -> &str {
        &self.scope
    }

    /// Probe/actual tensor behind a handle (shape inspection at trace time).
    pub fn value(&self, h: TRef) -> &Tensor {
        &self.values[h.0]
    }

    pub fn shape(&self, h: TRef) -> Vec<usize> {
        self.values[h.0].shape().to_vec()
    }

    pub fn dtype(&self, h: TRef) -> DType {
        self.values[h.0].dtype()
    }

    pub fn has_batch(&self, h: TRef) -> bool {
        self.flags[h.0].0
    }

    pub fn has_time(&self, h: TRef) -> bool {
        self.flags[h.0].1
    }

    pub fn batch_time_flags(&self, h: TRef) -> (bool, bool) {
        self.flags[h.0]
    }

    /// Static tail shape of a handle (flagged leading dims stripped).
    pub fn tail_shape(&self, h: TRef) -> Vec<usize> {
        let (b, t) = self.flags[h.0];
        let strip = (b as usize + t as usize).min(self.values[h.0].rank());
        self.values[h.0].shape()[strip..].to_vec()
    }

    /// Override the batch flag on a handle (e.g. outputs gathered by
    /// dynamically-sized index vectors).
    pub fn mark_batch(&mut self, h: TRef, batch: bool) -> TRef {
        self.flags[h.0].0 = batch;
        h
    }

    pub fn mark_time(&mut self, h: TRef, time: bool) -> TRef {
        self.flags[h.0].1 = time;
        h
    }

    fn numeric(&self, e: rlstage_core::CoreError) -> GraphError {
        GraphError::Numeric { scope: self.scope.clone(), source: e }
    }

    fn push_value(&mut self, t: Tensor, flags: (bool, bool), node: Option<NodeId>) -> TRef {
        self.values.push(t);
        self.flags.push(flags);
        self.node_of.push(node);
        TRef(self.values.len() - 1)
    }

    fn node_inputs(&self, ins: &[TRef]) -> GraphResult<Vec<NodeId>> {
        ins.iter()
            .map(|h| {
                self.node_of[h.0].ok_or_else(|| {
                    GraphError::Invalid("staged trace lost a node handle".into())
                })
            })
            .collect()
    }

    fn push_kernel(&mut self, op: KernelOp, attrs: Attrs, ins: &[TRef]) -> GraphResult<TRef> {
        let tensors: Vec<&Tensor> = ins.iter().map(|h| &self.values[h.0]).collect();
        let out = match &op {
            KernelOp::RandUniform => {
                Tensor::rand_uniform(tensors[0].shape().to_vec(), self.rng)
            }
            _ => eval_kernel_op(&op, &tensors, &attrs).map_err(|e| self.numeric(e))?,
        };
        let in_flags: Vec<(bool, bool)> = ins.iter().map(|h| self.flags[h.0]).collect();
        let in_ranks: Vec<usize> = ins.iter().map(|h| self.values[h.0].rank()).collect();
        let flags = out_flags(&op, &attrs, &in_flags, &in_ranks);
        let node = if self.mode == CtxMode::TraceStaged {
            let inputs = self.node_inputs(ins)?;
            let device = self.device.clone();
            Some(self.staged.as_mut().unwrap().push(NodeOp::Kernel(op.clone(), attrs.clone()), inputs, &device))
        } else {
            None
        };
        let input_slots: Vec<usize> = ins.iter().map(|h| h.0).collect();
        let h = self.push_value(out, flags, node);
        self.entries.push(TapeEntry { op, attrs, inputs: input_slots, out: h.0 });
        Ok(h)
    }

    fn prim(&mut self, op: OpCode, attrs: Attrs, ins: &[TRef]) -> GraphResult<TRef> {
        self.push_kernel(KernelOp::Prim(op), attrs, ins)
    }

    // -- public primitive vocabulary ------------------------------------

    pub fn add(&mut self, a: TRef, b: TRef) -> GraphResult<TRef> {
        self.prim(OpCode::Add, Attrs::default(), &[a, b])
    }

    pub fn sub(&mut self, a: TRef, b: TRef) -> GraphResult<TRef> {
        self.prim(OpCode::Sub, Attrs::default(), &[a, b])
    }

    pub fn mul(&mut self, a: TRef, b: TRef) -> GraphResult<TRef> {
        self.prim(OpCode::Mul, Attrs::default(), &[a, b])
    }

    pub fn div(&mut self, a: TRef, b: TRef) -> GraphResult<TRef> {
        self.prim(OpCode::Div, Attrs::default(), &[a, b])
    }

    pub fn neg(&mut self, a: TRef) -> GraphResult<TRef> {
        self.prim(OpCode::Neg, Attrs::default(), &[a])
    }

    pub fn matmul(&mut self, a: TRef, b: TRef) -> GraphResult<TRef> {
        self.prim(OpCode::MatMul, Attrs::default(), &[a, b])
    }

    pub fn relu(&mut self, a: TRef) -> GraphResult<TRef> {
        self.prim(OpCode::Relu, Attrs::default(), &[a])
    }

    pub fn tanh(&mut self, a: TRef) -> GraphResult<TRef> {
        self.prim(OpCode::Tanh, Attrs::default(), &[a])
    }

    pub fn exp(&mut self, a: TRef) -> GraphResult<TRef> {
        self.prim(OpCode::Exp, Attrs::default(), &[a])
    }

    pub fn log(&mut self, a: TRef) -> GraphResult<TRef> {
        self.prim(OpCode::Log, Attrs::default(), &[a])
    }

    pub fn square(&mut self, a: TRef) -> GraphResult<TRef> {
        self.prim(OpCode::Square, Attrs::default(), &[a])
    }

    pub fn sum(&mut self, a: TRef, axis: Option<isize>, keep_dims: bool) -> GraphResult<TRef> {
        self.prim(OpCode::Sum, Attrs { axis, keep_dims, ..Attrs::default() }, &[a])
    }

    pub fn mean(&mut self, a: TRef, axis: Option<isize>, keep_dims: bool) -> GraphResult<TRef> {
        self.prim(OpCode::Mean, Attrs { axis, keep_dims, ..Attrs::default() }, &[a])
    }

    pub fn max(&mut self, a: TRef, axis: Option<isize>, keep_dims: bool) -> GraphResult<TRef> {
        self.prim(OpCode::Max, Attrs { axis, keep_dims, ..Attrs::default() }, &[a])
    }

    pub fn argmax(&mut self, a: TRef, axis: isize) -> GraphResult<TRef> {
        self.prim(OpCode::ArgMax, Attrs::axis(axis), &[a])
    }

    pub fn gather(&mut self, x: TRef, idx: TRef, axis: isize) -> GraphResult<TRef> {
        self.prim(OpCode::Gather, Attrs::axis(axis), &[x, idx])
    }

    pub fn one_hot(&mut self, idx: TRef, depth: usize) -> GraphResult<TRef> {
        self.prim(OpCode::OneHot, Attrs { depth: Some(depth), ..Attrs::default() }, &[idx])
    }

    pub fn concat(&mut self, parts: &[TRef], axis: isize) -> GraphResult<TRef> {
        self.prim(OpCode::Concat, Attrs::axis(axis), parts)
    }

    pub fn reshape(&mut self, x: TRef, spec: Vec<isize>) -> GraphResult<TRef> {
        self.prim(OpCode::Reshape, Attrs { shape: Some(spec), ..Attrs::default() }, &[x])
    }

    pub fn broadcast(&mut self, x: TRef, target: Vec<isize>) -> GraphResult<TRef> {
        self.prim(OpCode::Broadcast, Attrs { shape: Some(target), ..Attrs::default() }, &[x])
    }

    pub fn less(&mut self, a: TRef, b: TRef) -> GraphResult<TRef> {
        self.prim(OpCode::Less, Attrs::default(), &[a, b])
    }

    pub fn where_(&mut self, cond: TRef, a: TRef, b: TRef) -> GraphResult<TRef> {
        self.prim(OpCode::Where, Attrs::default(), &[cond, a, b])
    }

    pub fn stop_gradient(&mut self, a: TRef) -> GraphResult<TRef> {
        self.prim(OpCode::StopGradient, Attrs::default(), &[a])
    }

    pub fn clip(&mut self, a: TRef, low: Option<f64>, high: Option<f64>) -> GraphResult<TRef> {
        self.prim(OpCode::Clip, Attrs { low, high, ..Attrs::default() }, &[a])
    }

    // -- infrastructure ops ----------------------------------------------

    /// Copy of `x` with `rows` written at `idx` along the leading axis.
    pub fn scatter(&mut self, x: TRef, idx: TRef, rows: TRef) -> GraphResult<TRef> {
        self.push_kernel(KernelOp::Scatter, Attrs::default(), &[x, idx, rows])
    }

    pub fn arange_i64(&mut self, n: TRef) -> GraphResult<TRef> {
        self.push_kernel(KernelOp::Arange(DType::I64), Attrs::default(), &[n])
    }

    pub fn arange_f64(&mut self, n: TRef) -> GraphResult<TRef> {
        self.push_kernel(KernelOp::Arange(DType::F64), Attrs::default(), &[n])
    }

    pub fn cast_f64(&mut self, x: TRef) -> GraphResult<TRef> {
        self.push_kernel(KernelOp::Cast(DType::F64), Attrs::default(), &[x])
    }

    pub fn cast_i64(&mut self, x: TRef) -> GraphResult<TRef> {
        self.push_kernel(KernelOp::Cast(DType::I64), Attrs::default(), &[x])
    }

    /// Runtime extent of `x` along `axis`, as a scalar i64.
    pub fn dim_size(&mut self, x: TRef, axis: usize) -> GraphResult<TRef> {
        self.push_kernel(KernelOp::DimSize(axis), Attrs::default(), &[x])
    }

    /// Uniform [0,1) draws shaped like `x`, from the executor stream.
    pub fn rand_like(&mut self, x: TRef) -> GraphResult<TRef> {
        self.push_kernel(KernelOp::RandUniform, Attrs::default(), &[x])
    }

    pub fn constant(&mut self, t: Tensor) -> TRef {
        let node = if self.mode == CtxMode::TraceStaged {
            let device = self.device.clone();
            Some(self.staged.as_mut().unwrap().push_const(t.clone(), &device))
        } else {
            None
        };
        self.push_value(t, (false, false), node)
    }

    pub fn scalar(&mut self, v: f64) -> TRef {
        self.constant(Tensor::scalar_f64(v))
    }

    pub fn scalar_i64(&mut self, v: i64) -> TRef {
        self.constant(Tensor::scalar_i64(v))
    }

    // -- derived helpers -------------------------------------------------

    /// x^e for positive x, via exp(e * log(x)).
    pub fn powf(&mut self, x: TRef, e: f64) -> GraphResult<TRef> {
        let lx = self.log(x)?;
        let c = self.scalar(e);
        let s = self.mul(lx, c)?;
        self.exp(s)
    }

    pub fn sqrt(&mut self, x: TRef) -> GraphResult<TRef> {
        self.powf(x, 0.5)
    }

    pub fn abs(&mut self, x: TRef) -> GraphResult<TRef> {
        let zero = self.scalar(0.0);
        let n = self.neg(x)?;
        let c = self.less(x, zero)?;
        self.where_(c, n, x)
    }

    pub fn minimum(&mut self, a: TRef, b: TRef) -> GraphResult<TRef> {
        let c = self.less(a, b)?;
        self.where_(c, a, b)
    }

    pub fn maximum(&mut self, a: TRef, b: TRef) -> GraphResult<TRef> {
        let c = self.less(a, b)?;
        self.where_(c, b, a)
    }

    /// Tensor shaped like `h`, filled with an f64 constant.
    pub fn full_like(&mut self, h: TRef, v: f64) -> GraphResult<TRef> {
        let zero = self.scalar(0.0);
        let z = self.mul(h, zero)?;
        let c = self.scalar(v);
        self.add(z, c)
    }

    /// `a mod m` for nonnegative i64 tensors.
    pub fn mod_i64(&mut self, a: TRef, m: TRef) -> GraphResult<TRef> {
        let q = self.div(a, m)?;
        let qm = self.mul(q, m)?;
        self.sub(a, qm)
    }

    // -- variables ---------------------------------------------------------

    /// Read a variable (name relative to the owning component's scope, or a
    /// full `/`-rooted name).
    pub fn read_var(&mut self, name: &str) -> GraphResult<TRef> {
        let full = self.full_name(name);
        let slot = self
            .vars
            .get(&full)
            .ok_or_else(|| GraphError::UnknownVariable(full.clone()))?;
        let value = slot.value.clone();
        let node = if self.mode == CtxMode::TraceStaged {
            let device = self.device.clone();
            Some(self.staged.as_mut().unwrap().push(NodeOp::VarRead(full.clone()), vec![], &device))
        } else {
            None
        };
        let h = self.push_value(value, (false, false), node);
        self.var_reads.entry(full).or_default().push(h.0);
        Ok(h)
    }

    /// Write a variable. Shapes are validated in every mode; the store is
    /// only mutated during execution (builds push probe values, not state).
    pub fn assign_var(&mut self, name: &str, h: TRef) -> GraphResult<()> {
        let full = self.full_name(name);
        let new_value = self.values[h.0].clone();
        let slot = self
            .vars
            .get_mut(&full)
            .ok_or_else(|| GraphError::UnknownVariable(full.clone()))?;
        if slot.value.shape() != new_value.shape() || slot.value.dtype() != new_value.dtype() {
            return Err(GraphError::VariableShape {
                name: full,
                problem: format!(
                    "assigned {:?}/{} over {:?}/{}",
                    new_value.shape(),
                    new_value.dtype(),
                    slot.value.shape(),
                    slot.value.dtype()
                ),
            });
        }
        match self.mode {
            CtxMode::Eval => slot.value = new_value,
            CtxMode::TraceStaged => {
                let input = self.node_inputs(&[h])?;
                let device = self.device.clone();
                let node =
                    self.staged.as_mut().unwrap().push(NodeOp::VarAssign(full), input, &device);
                self.effects.push(node);
            }
            CtxMode::TraceInfer => {}
        }
        Ok(())
    }

    /// Sorted full names of variables under a scope prefix.
    pub fn var_names_under(&self, prefix: &str, trainable_only: bool) -> Vec<String> {
        let mut names: Vec<String> = self
            .vars
            .iter()
            .filter(|(k, v)| k.starts_with(prefix) && (!trainable_only || v.trainable))
            .map(|(k, _)| k.clone())
            .collect();
        names.sort();
        names
    }

    // -- gradients ---------------------------------------------------------

    /// d(loss)/d(var) for every trainable variable under `prefix`, sorted by
    /// name. The loss must be scalar. In build modes the results are
    /// zero-valued probes of the right shapes.
    pub fn grad_by_prefix(&mut self, loss: TRef, prefix: &str) -> GraphResult<Vec<(String, TRef)>> {
        let names = self.var_names_under(prefix, true);
        if names.is_empty() {
            return Err(GraphError::Invalid(format!(
                "no trainable variables under prefix '{}'",
                prefix
            )));
        }
        self.grad(loss, &names).map(|hs| names.into_iter().zip(hs).collect())
    }

    pub fn grad(&mut self, loss: TRef, wrt: &[String]) -> GraphResult<Vec<TRef>> {
        match self.mode {
            CtxMode::Eval => {
                let mut slot_lists: Vec<Vec<usize>> = Vec::with_capacity(wrt.len());
                let mut flat: Vec<usize> = Vec::new();
                for name in wrt {
                    let slots = self.var_reads.get(name).cloned().unwrap_or_default();
                    flat.extend(&slots);
                    slot_lists.push(slots);
                }
                let grads = backward(self.values, self.entries, loss.0, &flat)
                    .map_err(|e| self.numeric(e))?;
                let mut cursor = 0usize;
                let mut out = Vec::with_capacity(wrt.len());
                for (name, slots) in wrt.iter().zip(slot_lists) {
                    let mut total: Option<Tensor> = None;
                    for _ in 0..slots.len() {
                        let g = grads[cursor].clone();
                        cursor += 1;
                        total = Some(match total {
                            None => g,
                            Some(acc) => {
                                rlstage_core::eval_primitive(
                                    OpCode::Add,
                                    &[&acc, &g],
                                    &Attrs::default(),
                                )
                                .map_err(|e| self.numeric(e))?
                            }
                        });
                    }
                    let g = match total {
                        Some(g) => g,
                        None => {
                            let var = self.vars.get(name).ok_or_else(|| {
                                GraphError::UnknownVariable(name.clone())
                            })?;
                            Tensor::zeros(DType::F64, var.value.shape().to_vec())
                        }
                    };
                    out.push(self.push_value(g, (false, false), None));
                }
                Ok(out)
            }
            CtxMode::TraceStaged => {
                let loss_node = self.node_inputs(&[loss])?;
                let device = self.device.clone();
                let grad_node = self.staged.as_mut().unwrap().push(
                    NodeOp::Grad { wrt: wrt.to_vec() },
                    loss_node,
                    &device,
                );
                let mut out = Vec::with_capacity(wrt.len());
                for (slot, name) in wrt.iter().enumerate() {
                    let var = self
                        .vars
                        .get(name)
                        .ok_or_else(|| GraphError::UnknownVariable(name.clone()))?;
                    let probe = Tensor::zeros(DType::F64, var.value.shape().to_vec());
                    let node = self.staged.as_mut().unwrap().push(
                        NodeOp::GradOut { slot },
                        vec![grad_node],
                        &device,
                    );
                    out.push(self.push_value(probe, (false, false), Some(node)));
                }
                Ok(out)
            }
            CtxMode::TraceInfer => wrt
                .iter()
                .map(|name| {
                    let var = self
                        .vars
                        .get(name)
                        .ok_or_else(|| GraphError::UnknownVariable(name.clone()))?;
                    let probe = Tensor::zeros(DType::F64, var.value.shape().to_vec());
                    Ok(self.push_value(probe, (false, false), None))
                })
                .collect(),
        }
    }

    /// Runtime check that `a < b` holds elementwise (with broadcasting).
    /// Build traces record the check without evaluating it.
    pub fn assert_less(&mut self, a: TRef, b: TRef, msg: &str) -> GraphResult<()> {
        match self.mode {
            CtxMode::Eval => {
                let ok = rlstage_core::eval_primitive(
                    OpCode::Less,
                    &[&self.values[a.0], &self.values[b.0]],
                    &Attrs::default(),
                )
                .map_err(|e| self.numeric(e))?;
                if ok.as_bool().map_err(|e| self.numeric(e))?.iter().any(|v| !*v) {
                    return Err(GraphError::RuntimeAssert {
                        scope: self.scope.clone(),
                        msg: msg.to_string(),
                    });
                }
                Ok(())
            }
            CtxMode::TraceStaged => {
                let inputs = self.node_inputs(&[a, b])?;
                let device = self.device.clone();
                let scope = self.scope.clone();
                let node = self.staged.as_mut().unwrap().push(
                    NodeOp::AssertLess { scope, msg: msg.to_string() },
                    inputs,
                    &device,
                );
                self.effects.push(node);
                Ok(())
            }
            CtxMode::TraceInfer => Ok(()),
        }
    }
}

