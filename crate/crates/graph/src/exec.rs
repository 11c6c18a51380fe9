//! Graph executors.
//!
//! An executor serves API calls against a built registry and owns the
//! variable state. In staged mode it interprets exactly the ancestor
//! subgraph of the requested outputs (plus that API's effect nodes), in
//! ascending node-id order, which is the trace order and therefore a valid
//! topological order shared with define-by-run execution. In define-by-run
//! mode it directly evaluates the bound chain of graph functions; the
//! contracted chain skips component-call framing entirely, while routed
//! mode walks the recorded call tree (used to check the fast path against
//! the framed path).
//!
//! Every stochastic kernel draws from the executor's stream in trace
//! order, so both modes consume the stream identically under a shared
//! seed. One executor is confined to a single thread at a time; concurrent
//! execution takes one executor per thread.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Instant;

use rand_chacha::ChaCha8Rng;
use rlstage_core::{
    backward, eval_kernel_op, rng, Attrs, KernelOp, OpCode, Space, TapeEntry, Tensor, Value,
};

use crate::build::{BackendMode, DbrSource, OpRegistry};
use crate::error::{GraphError, GraphResult};
use crate::kernel::{CtxMode, KernelArg, KernelCtx, KernelOut, NodeId, NodeOp, TRef, VarStore};

pub struct GraphExecutor {
    registry: Arc<OpRegistry>,
    vars: VarStore,
    rng: ChaCha8Rng,
    /// Define-by-run: walk the call tree instead of the contracted chain.
    routed: bool,
    last_op_count: usize,
    last_component_hops: usize,
    timing_enabled: bool,
    timing_log: Vec<String>,
}

impl GraphExecutor {
    pub fn new(registry: Arc<OpRegistry>, seed: u64) -> GraphExecutor {
        let vars = registry.variables.clone();
        GraphExecutor {
            registry,
            vars,
            rng: rng::derive(seed, "/executor"),
            routed: false,
            last_op_count: 0,
            last_component_hops: 0,
            timing_enabled: false,
            timing_log: Vec::new(),
        }
    }

    pub fn mode(&self) -> BackendMode {
        self.registry.mode
    }

    pub fn registry(&self) -> &OpRegistry {
        &self.registry
    }

    /// Disable the contracted define-by-run fast path.
    pub fn set_routed(&mut self, routed: bool) {
        self.routed = routed;
    }

    /// Nodes (staged) or kernel ops (define-by-run) evaluated by the last
    /// call.
    pub fn last_op_count(&self) -> usize {
        self.last_op_count
    }

    /// Component-call frames entered by the last define-by-run call (zero on
    /// the contracted path).
    pub fn last_component_hops(&self) -> usize {
        self.last_component_hops
    }

    pub fn enable_timing_log(&mut self, on: bool) {
        self.timing_enabled = on;
    }

    /// Lines of the form `api,<name>,<micros>`.
    pub fn take_timing_log(&mut self) -> Vec<String> {
        std::mem::take(&mut self.timing_log)
    }

    pub fn api_names(&self) -> Vec<String> {
        self.registry.apis.keys().cloned().collect()
    }

    // -- variable access ----------------------------------------------------

    /// Copies of all variables whose full name starts with `prefix`.
    pub fn read_variables(&self, prefix: &str) -> Vec<(String, Tensor)> {
        self.vars
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(k, v)| (k.clone(), v.value.clone()))
            .collect()
    }

    pub fn read_variable(&self, full_name: &str) -> GraphResult<Tensor> {
        self.vars
            .get(full_name)
            .map(|v| v.value.clone())
            .ok_or_else(|| GraphError::UnknownVariable(full_name.to_string()))
    }

    /// Replace variable values. Applied atomically with respect to
    /// subsequent `execute` calls (the executor is externally synchronized).
    pub fn write_variables(&mut self, updates: &[(String, Tensor)]) -> GraphResult<()> {
        for (name, value) in updates {
            let slot = self
                .vars
                .get(name)
                .ok_or_else(|| GraphError::UnknownVariable(name.clone()))?;
            if slot.value.shape() != value.shape() || slot.value.dtype() != value.dtype() {
                return Err(GraphError::VariableShape {
                    name: name.clone(),
                    problem: format!(
                        "write of {:?}/{} over {:?}/{}",
                        value.shape(),
                        value.dtype(),
                        slot.value.shape(),
                        slot.value.dtype()
                    ),
                });
            }
        }
        for (name, value) in updates {
            self.vars.get_mut(name).unwrap().value = value.clone();
        }
        Ok(())
    }

    pub fn variable_names(&self) -> Vec<String> {
        self.vars.keys().cloned().collect()
    }

    // -- execution ----------------------------------------------------------

    pub fn execute(&mut self, api: &str, args: &[Value]) -> GraphResult<Vec<Value>> {
        let started = Instant::now();
        let runtime = self.registry.api(api)?;
        if runtime.params.len() != args.len() {
            return Err(GraphError::ArityMismatch {
                api: api.to_string(),
                given: args.len(),
                expected: runtime.params.len(),
            });
        }
        for (i, ((name, space), value)) in runtime.params.iter().zip(args).enumerate() {
            if !space.contains(value) {
                return Err(GraphError::ArgSpaceViolation {
                    api: api.to_string(),
                    index: i,
                    problem: format!("'{}' does not accept the given value", name),
                });
            }
        }
        let out = match self.registry.mode {
            BackendMode::Staged => self.execute_staged(api, args),
            BackendMode::DefineByRun => self.execute_dbr(api, args),
        }?;
        if self.timing_enabled {
            self.timing_log
                .push(format!("api,{},{}", api, started.elapsed().as_micros()));
        }
        Ok(out)
    }

    fn execute_staged(&mut self, api: &str, args: &[Value]) -> GraphResult<Vec<Value>> {
        let registry = self.registry.clone();
        let runtime = registry.api(api)?;
        let nodes = &registry.nodes;

        // Flat placeholder feed.
        let mut feed: HashMap<&str, &Tensor> = HashMap::new();
        let mut flat_args: Vec<(String, Vec<(String, Tensor)>)> = Vec::new();
        for ((param, _), value) in runtime.params.iter().zip(args) {
            let leaves: Vec<(String, Tensor)> = value
                .flatten()
                .into_iter()
                .map(|(k, t)| (format!("/{}{}", param, k), t.clone()))
                .collect();
            flat_args.push((param.clone(), leaves));
        }
        for (_, leaves) in &flat_args {
            for (k, t) in leaves {
                feed.insert(k.as_str(), t);
            }
        }

        let mut values: Vec<Tensor> = vec![Tensor::scalar_f64(0.0); nodes.len()];
        let mut evaluated = vec![false; nodes.len()];
        let mut var_read_slots: HashMap<&str, Vec<NodeId>> = HashMap::new();
        let mut grads_cache: HashMap<NodeId, Vec<Tensor>> = HashMap::new();

        for &n in &runtime.required {
            let node = &nodes[n];
            let value = match &node.op {
                NodeOp::Placeholder { key } => (*feed
                    .get(key.as_str())
                    .ok_or_else(|| GraphError::Invalid(format!("no feed for placeholder '{}'", key)))?)
                .clone(),
                NodeOp::Const(i) => registry.constants[*i].clone(),
                NodeOp::VarRead(name) => {
                    var_read_slots.entry(name.as_str()).or_default().push(n);
                    self.vars
                        .get(name)
                        .ok_or_else(|| GraphError::UnknownVariable(name.clone()))?
                        .value
                        .clone()
                }
                NodeOp::VarAssign(name) => {
                    let v = values[node.inputs[0]].clone();
                    let slot = self
                        .vars
                        .get_mut(name)
                        .ok_or_else(|| GraphError::UnknownVariable(name.clone()))?;
                    slot.value = v.clone();
                    v
                }
                NodeOp::Kernel(KernelOp::RandUniform, _) => {
                    Tensor::rand_uniform(values[node.inputs[0]].shape().to_vec(), &mut self.rng)
                }
                NodeOp::Kernel(op, attrs) => {
                    let ins: Vec<&Tensor> = node.inputs.iter().map(|i| &values[*i]).collect();
                    eval_kernel_op(op, &ins, attrs).map_err(|e| GraphError::Numeric {
                        scope: node.device.clone(),
                        source: e,
                    })?
                }
                NodeOp::AssertLess { scope, msg } => {
                    let ok = rlstage_core::eval_primitive(
                        OpCode::Less,
                        &[&values[node.inputs[0]], &values[node.inputs[1]]],
                        &Attrs::default(),
                    )
                    .map_err(|e| GraphError::Numeric { scope: scope.clone(), source: e })?;
                    if ok
                        .as_bool()
                        .map_err(|e| GraphError::Numeric { scope: scope.clone(), source: e })?
                        .iter()
                        .any(|v| !*v)
                    {
                        return Err(GraphError::RuntimeAssert {
                            scope: scope.clone(),
                            msg: msg.clone(),
                        });
                    }
                    Tensor::scalar_bool(true)
                }
                NodeOp::Grad { wrt } => {
                    let grads =
                        self.eval_grad(nodes, &values, &evaluated, node.inputs[0], wrt, &var_read_slots)?;
                    grads_cache.insert(n, grads);
                    Tensor::scalar_bool(true)
                }
                NodeOp::GradOut { slot } => grads_cache
                    .get(&node.inputs[0])
                    .and_then(|g| g.get(*slot))
                    .cloned()
                    .ok_or_else(|| GraphError::Invalid("gradient fetched before computed".into()))?,
            };
            values[n] = value;
            evaluated[n] = true;
        }

        self.last_op_count = runtime.required.len();
        self.last_component_hops = 0;

        let mut outs = Vec::new();
        for (space, leaf_nodes) in &runtime.out_staged {
            let keys: Vec<String> = space.flatten().into_iter().map(|(k, _)| k).collect();
            let pairs: Vec<(String, Tensor)> = keys
                .into_iter()
                .zip(leaf_nodes.iter().map(|n| values[*n].clone()))
                .collect();
            outs.push(Value::unflatten(pairs)?);
        }
        Ok(outs)
    }

    /// Tape view over the evaluated staged subgraph: kernel nodes become
    /// entries (ascending id = trace order), everything else is a leaf.
    fn eval_grad(
        &self,
        nodes: &[crate::kernel::StagedNode],
        values: &[Tensor],
        evaluated: &[bool],
        loss: NodeId,
        wrt: &[String],
        var_read_slots: &HashMap<&str, Vec<NodeId>>,
    ) -> GraphResult<Vec<Tensor>> {
        let mut entries = Vec::new();
        for (n, node) in nodes.iter().enumerate() {
            if !evaluated[n] || n > loss {
                continue;
            }
            if let NodeOp::Kernel(op, attrs) = &node.op {
                if matches!(op, KernelOp::RandUniform) {
                    continue;
                }
                entries.push(TapeEntry {
                    op: op.clone(),
                    attrs: attrs.clone(),
                    inputs: node.inputs.clone(),
                    out: n,
                });
            }
        }
        let mut slot_lists = Vec::with_capacity(wrt.len());
        let mut flat = Vec::new();
        for name in wrt {
            let slots = var_read_slots.get(name.as_str()).cloned().unwrap_or_default();
            flat.extend(slots.iter().copied());
            slot_lists.push(slots);
        }
        let grads = backward(values, &entries, loss, &flat)
            .map_err(|e| GraphError::Numeric { scope: "<grad>".into(), source: e })?;
        let mut cursor = 0usize;
        let mut out = Vec::with_capacity(wrt.len());
        for (name, slots) in wrt.iter().zip(slot_lists) {
            let mut total: Option<Tensor> = None;
            for _ in 0..slots.len() {
                let g = grads[cursor].clone();
                cursor += 1;
                total = Some(match total {
                    None => g,
                    Some(acc) => rlstage_core::eval_primitive(
                        OpCode::Add,
                        &[&acc, &g],
                        &Attrs::default(),
                    )?,
                });
            }
            out.push(match total {
                Some(g) => g,
                None => {
                    let var = self
                        .vars
                        .get(name)
                        .ok_or_else(|| GraphError::UnknownVariable(name.clone()))?;
                    Tensor::zeros(rlstage_core::DType::F64, var.value.shape().to_vec())
                }
            });
        }
        Ok(out)
    }

    fn execute_dbr(&mut self, api: &str, args: &[Value]) -> GraphResult<Vec<Value>> {
        let registry = self.registry.clone();
        let runtime = registry.api(api)?;

        let mut state = DbrState::default();
        // Seed API parameter records with the given leaves.
        for (rec, value) in runtime.in_records.iter().zip(args) {
            let space = registry.rec_space.get(rec).ok_or_else(|| {
                GraphError::Invalid(format!("input record {} has no space", rec))
            })?;
            let mut slots = Vec::new();
            for ((_, leaf_space), (_, tensor)) in space.flatten().iter().zip(value.flatten()) {
                state.values.push(tensor.clone());
                state.flags.push((leaf_space.has_batch_rank(), leaf_space.has_time_rank()));
                state.node_of.push(None);
                slots.push(state.values.len() - 1);
            }
            state.rec_slots.insert(*rec, slots);
        }

        let mut hops = 0usize;
        if self.routed {
            let sites = runtime.root_sites.clone();
            self.walk_sites(&registry, &sites, &mut state, &mut hops)?;
        } else {
            for step in runtime.steps.clone() {
                self.run_step(&registry, step, &mut state)?;
            }
        }

        self.last_op_count = state.entries.len();
        self.last_component_hops = hops;

        let mut outs = Vec::new();
        for rec in &runtime.out_records {
            let slots = resolve_slots(&registry, *rec, &mut state)?;
            let space = registry.rec_space.get(rec).ok_or_else(|| {
                GraphError::Invalid(format!("output record {} has no space", rec))
            })?;
            let pairs: Vec<(String, Tensor)> = space
                .flatten()
                .into_iter()
                .map(|(k, _)| k)
                .zip(slots.iter().map(|s| state.values[*s].clone()))
                .collect();
            outs.push(Value::unflatten(pairs)?);
        }
        Ok(outs)
    }

    fn walk_sites(
        &mut self,
        registry: &Arc<OpRegistry>,
        sites: &[usize],
        state: &mut DbrState,
        hops: &mut usize,
    ) -> GraphResult<()> {
        for &sid in sites {
            let site = registry.sites[sid].clone();
            match site.step {
                Some(step) => self.run_step(registry, step, state)?,
                None => {
                    *hops += 1;
                    self.walk_sites(registry, &site.children, state, hops)?;
                }
            }
        }
        Ok(())
    }

    fn run_step(
        &mut self,
        registry: &Arc<OpRegistry>,
        step_idx: usize,
        state: &mut DbrState,
    ) -> GraphResult<()> {
        let step = &registry.steps[step_idx];

        let mut args = Vec::with_capacity(step.inputs.len());
        for (rec, space) in step.inputs.iter().zip(&step.in_spaces) {
            let slots = resolve_slots(registry, *rec, state)?;
            let keys: Vec<String> = space.flatten().into_iter().map(|(k, _)| k).collect();
            args.push(KernelArg {
                keys,
                leaves: slots.into_iter().map(TRef).collect(),
            });
        }

        let kernel = step.kernel.clone();
        let outs = {
            let mut effects = Vec::new();
            let mut var_reads = std::mem::take(&mut state.var_reads);
            let mut ctx = KernelCtx {
                mode: CtxMode::Eval,
                scope: step.scope.clone(),
                device: step.device.clone(),
                values: &mut state.values,
                flags: &mut state.flags,
                entries: &mut state.entries,
                node_of: &mut state.node_of,
                staged: None,
                vars: &mut self.vars,
                rng: &mut self.rng,
                var_reads: &mut var_reads,
                effects: &mut effects,
            };
            let outs = kernel(&mut ctx, &args);
            state.var_reads = var_reads;
            outs?
        };

        for (slot, out) in outs.into_iter().enumerate() {
            let rec = step.outputs[slot];
            let slots = match out {
                KernelOut::Leaf(h) => vec![h.0],
                KernelOut::Group(pairs) => {
                    let mut sorted: Vec<(String, usize)> =
                        pairs.into_iter().map(|(k, h)| (k, h.0)).collect();
                    sorted.sort_by(|a, b| a.0.cmp(&b.0));
                    sorted.into_iter().map(|(_, s)| s).collect()
                }
            };
            state.rec_slots.insert(rec, slots);
        }
        Ok(())
    }
}

/// Per-call define-by-run state: one shared tape plus the value slots each
/// record's leaves occupy. Sharing slots keeps the tape connected across
/// graph-function calls so gradients flow through component boundaries.
#[derive(Default)]
struct DbrState {
    values: Vec<Tensor>,
    flags: Vec<(bool, bool)>,
    entries: Vec<TapeEntry>,
    node_of: Vec<Option<NodeId>>,
    var_reads: HashMap<String, Vec<usize>>,
    rec_slots: HashMap<usize, Vec<usize>>,
}

/// Leaf slots of a record, deriving structural records on demand.
fn resolve_slots(
    registry: &OpRegistry,
    rec: usize,
    state: &mut DbrState,
) -> GraphResult<Vec<usize>> {
    if let Some(slots) = state.rec_slots.get(&rec) {
        return Ok(slots.clone());
    }
    let source = registry
        .sources
        .get(&rec)
        .ok_or_else(|| GraphError::Invalid(format!("record {} has no runtime source", rec)))?
        .clone();
    let slots = match source {
        DbrSource::Param { api, param } => {
            return Err(GraphError::Invalid(format!(
                "API input {} of '{}' was not fed",
                param, api
            )));
        }
        DbrSource::Step { step, slot } => {
            return Err(GraphError::Invalid(format!(
                "record {} (step {} slot {}) consumed before production",
                rec, step, slot
            )));
        }
        DbrSource::Const(i) => {
            state.values.push(registry.constants[i].clone());
            state.flags.push((false, false));
            state.node_of.push(None);
            vec![state.values.len() - 1]
        }
        DbrSource::Item { parent, key } => {
            let parent_slots = resolve_slots(registry, parent, state)?;
            let pspace = registry.rec_space.get(&parent).ok_or_else(|| {
                GraphError::Invalid(format!("record {} has no space", parent))
            })?;
            let prefix = format!("/{}", key);
            let mut out = Vec::new();
            for ((leaf_key, _), slot) in pspace.flatten().iter().zip(&parent_slots) {
                if leaf_key == &prefix || leaf_key.starts_with(&format!("{}/", prefix)) {
                    out.push(*slot);
                }
            }
            if out.is_empty() {
                return Err(GraphError::Invalid(format!(
                    "container record has no leaves under '{}'",
                    key
                )));
            }
            out
        }
        DbrSource::Nest { children } => {
            let mut pairs: Vec<(String, usize)> = Vec::new();
            for (key, child) in &children {
                let child_slots = resolve_slots(registry, *child, state)?;
                let cspace = registry.rec_space.get(child).ok_or_else(|| {
                    GraphError::Invalid(format!("record {} has no space", child))
                })?;
                for ((leaf_key, _), slot) in cspace.flatten().iter().zip(child_slots) {
                    pairs.push((format!("/{}{}", key, leaf_key), slot));
                }
            }
            pairs.sort_by(|a, b| a.0.cmp(&b.0));
            pairs.into_iter().map(|(_, s)| s).collect()
        }
    };
    state.rec_slots.insert(rec, slots.clone());
    Ok(slots)
}

/// Convenience spec of a space for component-test input maps.
pub fn space_entry(name: &str, space: Space) -> (String, Space) {
    (name.to_string(), space)
}
