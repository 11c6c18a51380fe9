//! Graph compilation.
//!
//! The build propagates spaces breadth-first from the API input records
//! through the recorded call sites. Whenever every graph-function call-site
//! argument of a component has a known space, the component's variables are
//! created and its call sites are materialized: in staged mode each kernel
//! is traced once into the node table, in define-by-run mode the kernel is
//! bound for direct calls, with zero-filled probes pushed through for shape
//! inference in both. Functions flagged `defer` materialize in a final wave
//! so they can resolve variable sets across the whole graph.
//!
//! Probes use marker extents (batch 2, time 3) on the flagged leading dims;
//! structural constants are pushed through at their real values.

use std::collections::{HashMap, HashSet};
use std::time::{Duration, Instant};

use indexmap::IndexMap;
use rand_chacha::ChaCha8Rng;
use rlstage_core::{rng, Space, TapeEntry, Tensor, Value};

use crate::component::{Component, GraphFn, Kernel};
use crate::error::{GraphError, GraphResult};
use crate::kernel::{
    CtxMode, KernelArg, KernelCtx, KernelOut, NodeId, NodeOp, StagedNode, StagedSink, TRef,
    VarSlot, VarStore,
};
use crate::meta::{leaf_space_of, CallSite, ComponentGraph, Rec, RecordOrigin, SiteId, SiteKind};

pub const PROBE_BATCH: usize = 2;
pub const PROBE_TIME: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BackendMode {
    Staged,
    DefineByRun,
}

/// Scope-pattern device assignment, separate for ops and variables.
/// Longest matching prefix wins; a call-site override (replica expansion)
/// takes precedence, then map rules, then the component's declared or
/// inherited label, then the default.
#[derive(Clone, Debug)]
pub struct DeviceMap {
    default: String,
    op_rules: Vec<(String, String)>,
    var_rules: Vec<(String, String)>,
}

impl Default for DeviceMap {
    fn default() -> Self {
        DeviceMap::new("cpu:0")
    }
}

impl DeviceMap {
    pub fn new(default: &str) -> DeviceMap {
        DeviceMap { default: default.to_string(), op_rules: Vec::new(), var_rules: Vec::new() }
    }

    pub fn add_op_rule(&mut self, prefix: &str, label: &str) -> GraphResult<()> {
        if self.op_rules.iter().any(|(p, _)| p == prefix) {
            return Err(GraphError::DuplicateDeviceRule(prefix.to_string()));
        }
        self.op_rules.push((prefix.to_string(), label.to_string()));
        Ok(())
    }

    pub fn add_var_rule(&mut self, prefix: &str, label: &str) -> GraphResult<()> {
        if self.var_rules.iter().any(|(p, _)| p == prefix) {
            return Err(GraphError::DuplicateDeviceRule(prefix.to_string()));
        }
        self.var_rules.push((prefix.to_string(), label.to_string()));
        Ok(())
    }

    pub fn default_device(&self) -> &str {
        &self.default
    }

    fn longest(rules: &[(String, String)], scope: &str) -> Option<String> {
        rules
            .iter()
            .filter(|(p, _)| scope.starts_with(p.as_str()))
            .max_by_key(|(p, _)| p.len())
            .map(|(_, l)| l.clone())
    }

    pub fn ops_device(
        &self,
        scope: &str,
        declared: Option<&str>,
        site_override: Option<&str>,
    ) -> String {
        site_override
            .map(str::to_string)
            .or_else(|| Self::longest(&self.op_rules, scope))
            .or_else(|| declared.map(str::to_string))
            .unwrap_or_else(|| self.default.clone())
    }

    pub fn vars_device(&self, scope: &str, declared: Option<&str>) -> String {
        Self::longest(&self.var_rules, scope)
            .or_else(|| declared.map(str::to_string))
            .unwrap_or_else(|| self.default.clone())
    }
}

#[derive(Clone, Debug, Default)]
pub struct BuildStats {
    pub component_count: usize,
    pub op_count: usize,
    pub variable_count: usize,
    pub meta_graph_time: Duration,
    pub build_time: Duration,
}

impl BuildStats {
    /// Flat key/value text block.
    pub fn to_text(&self) -> String {
        format!(
            "components={}\nops={}\nvariables={}\nmeta_graph_ms={:.3}\nbuild_ms={:.3}\n",
            self.component_count,
            self.op_count,
            self.variable_count,
            self.meta_graph_time.as_secs_f64() * 1e3,
            self.build_time.as_secs_f64() * 1e3,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BuildEvent {
    VarsCreated(String),
    FnMaterialized { scope: String, fn_name: String },
}

/// Ordering ledger for the variable-creation barrier: variables first, then
/// graph functions, exactly once each.
#[derive(Default, Debug)]
pub struct BuildLedger {
    vars_created: HashSet<String>,
    pub events: Vec<BuildEvent>,
}

impl BuildLedger {
    pub fn mark_vars_created(&mut self, scope: &str) -> GraphResult<()> {
        if !self.vars_created.insert(scope.to_string()) {
            return Err(GraphError::VariablesAlreadyCreated(scope.to_string()));
        }
        self.events.push(BuildEvent::VarsCreated(scope.to_string()));
        Ok(())
    }

    pub fn mark_fn_materialized(&mut self, scope: &str, fn_name: &str) -> GraphResult<()> {
        if !self.vars_created.contains(scope) {
            return Err(GraphError::BarrierViolation(scope.to_string()));
        }
        self.events.push(BuildEvent::FnMaterialized {
            scope: scope.to_string(),
            fn_name: fn_name.to_string(),
        });
        Ok(())
    }

    pub fn vars_created(&self, scope: &str) -> bool {
        self.vars_created.contains(scope)
    }
}

/// Context handed to a component's variable builder once it is
/// input-complete.
pub struct VarCtx<'a> {
    scope: String,
    device: String,
    rng: ChaCha8Rng,
    vars: &'a mut VarStore,
    input_spaces: &'a IndexMap<String, Vec<Space>>,
}

impl<'a> VarCtx<'a> {
    pub fn scope(&self) -> &str {
        &self.scope
    }

    /// Inferred argument spaces per graph function of this component.
    pub fn input_spaces(&self) -> &IndexMap<String, Vec<Space>> {
        self.input_spaces
    }

    pub fn fn_input_space(&self, fn_name: &str, arg: usize) -> GraphResult<&Space> {
        self.input_spaces
            .get(fn_name)
            .and_then(|v| v.get(arg))
            .ok_or_else(|| {
                GraphError::Invalid(format!(
                    "no inferred space for argument {} of '{}::{}'",
                    arg, self.scope, fn_name
                ))
            })
    }

    /// Deterministic stream derived from the build seed and this scope.
    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn create_var(&mut self, local: &str, value: Tensor, trainable: bool) -> GraphResult<String> {
        if local.is_empty() || local.starts_with('/') {
            return Err(GraphError::InvalidName(local.to_string()));
        }
        let full = format!("{}/{}", self.scope, local);
        if self.vars.contains_key(&full) {
            return Err(GraphError::VariableShape {
                name: full,
                problem: "created twice".into(),
            });
        }
        self.vars.insert(
            full.clone(),
            VarSlot { value, trainable, device: self.device.clone() },
        );
        Ok(full)
    }

    /// Shapes of existing variables under a scope prefix (sorted). Lets
    /// state that mirrors other components' parameters (optimizer moments)
    /// size itself; dependency order guarantees those exist.
    pub fn vars_under(&self, prefix: &str, trainable_only: bool) -> Vec<(String, Vec<usize>)> {
        let mut out: Vec<(String, Vec<usize>)> = self
            .vars
            .iter()
            .filter(|(k, v)| k.starts_with(prefix) && (!trainable_only || v.trainable))
            .map(|(k, v)| (k.clone(), v.value.shape().to_vec()))
            .collect();
        out.sort();
        out
    }
}

/// How a define-by-run record obtains its value at call time.
#[derive(Clone, Debug)]
pub enum DbrSource {
    Param { api: String, param: usize },
    Step { step: usize, slot: usize },
    Const(usize),
    Item { parent: usize, key: String },
    Nest { children: Vec<(String, usize)> },
}

/// One bound graph-function call in the define-by-run chain.
pub struct DbrStep {
    pub site: usize,
    pub scope: String,
    pub fn_name: String,
    pub kernel: Kernel,
    pub inputs: Vec<usize>,
    pub outputs: Vec<usize>,
    pub in_spaces: Vec<Space>,
    pub out_spaces: Vec<Space>,
    pub device: String,
}

/// Call-site skeleton kept for routed define-by-run execution and
/// visualization-independent checks.
#[derive(Clone, Debug)]
pub struct SiteLite {
    pub kind: SiteKind,
    pub name: String,
    pub callee: String,
    pub children: Vec<usize>,
    pub step: Option<usize>,
}

pub struct ApiRuntime {
    pub name: String,
    pub params: Vec<(String, Space)>,
    pub in_records: Vec<usize>,
    pub out_records: Vec<usize>,
    /// Staged: flat placeholder descriptors in lexicographic order per param.
    pub placeholders: Vec<(String, Space, NodeId)>,
    pub out_staged: Vec<(Space, Vec<NodeId>)>,
    pub effects: Vec<NodeId>,
    /// Ancestor set of outputs and effects, ascending.
    pub required: Vec<NodeId>,
    /// Define-by-run: bound steps in call order, and top-level sites.
    pub steps: Vec<usize>,
    pub root_sites: Vec<usize>,
}

pub struct OpRegistry {
    pub mode: BackendMode,
    pub nodes: Vec<StagedNode>,
    pub constants: Vec<Tensor>,
    pub apis: IndexMap<String, ApiRuntime>,
    pub variables: VarStore,
    pub steps: Vec<DbrStep>,
    pub sources: HashMap<usize, DbrSource>,
    pub rec_space: HashMap<usize, Space>,
    pub sites: Vec<SiteLite>,
    pub ledger: BuildLedger,
    pub stats: BuildStats,
}

impl std::fmt::Debug for OpRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OpRegistry")
            .field("mode", &self.mode)
            .field("nodes", &self.nodes.len())
            .field("steps", &self.steps.len())
            .field("variables", &self.variables.len())
            .field("apis", &self.apis.keys().collect::<Vec<_>>())
            .finish()
    }
}

impl OpRegistry {
    pub fn api(&self, name: &str) -> GraphResult<&ApiRuntime> {
        self.apis.get(name).ok_or_else(|| GraphError::UnknownApi {
            scope: "<registry>".into(),
            name: name.to_string(),
        })
    }
}

#[derive(Clone, Debug, Default)]
pub struct BuildOptions {
    pub seed: u64,
    /// Flip the per-wave component visit order (queue tie-breaking check).
    pub reverse_queue: bool,
}

pub fn build(
    graph: &mut ComponentGraph,
    input_spaces: &IndexMap<String, Space>,
    device_map: &DeviceMap,
    mode: BackendMode,
) -> GraphResult<(OpRegistry, BuildStats)> {
    build_with(graph, input_spaces, device_map, mode, &BuildOptions::default())
}

struct Builder<'g> {
    graph: &'g ComponentGraph,
    device_map: &'g DeviceMap,
    mode: BackendMode,
    opts: BuildOptions,
    rec_space: Vec<Option<Space>>,
    rec_nodes: HashMap<usize, Vec<NodeId>>,
    const_nodes: HashMap<usize, NodeId>,
    staged: StagedSink,
    vars: VarStore,
    ledger: BuildLedger,
    steps: Vec<DbrStep>,
    site_step: HashMap<usize, usize>,
    api_effects: HashMap<String, Vec<NodeId>>,
    fn_sites: IndexMap<String, Vec<SiteId>>,
    seen_fn_spaces: HashMap<String, IndexMap<String, Vec<Space>>>,
    trace_rng: ChaCha8Rng,
    traced_ops: usize,
}

/// Record one function's argument spaces, rejecting disagreements with
/// earlier call sites (no implicit casting; shapes, dtypes, and rank flags
/// must match exactly).
fn merge_fn_spaces(
    fn_spaces: &mut IndexMap<String, Vec<Space>>,
    scope: &str,
    fn_name: &str,
    spaces: Vec<Space>,
) -> GraphResult<()> {
    match fn_spaces.get(fn_name) {
        None => {
            fn_spaces.insert(fn_name.to_string(), spaces);
        }
        Some(prev) => {
            if prev.len() != spaces.len() {
                return Err(GraphError::SpaceConflict {
                    what: format!("'{}::{}' arity", scope, fn_name),
                    left: prev.len().to_string(),
                    right: spaces.len().to_string(),
                });
            }
            for (i, (a, b)) in prev.iter().zip(&spaces).enumerate() {
                if !space_compatible(a, b) {
                    return Err(GraphError::SpaceConflict {
                        what: format!("argument {} of '{}::{}'", i, scope, fn_name),
                        left: format!("{:?}", a),
                        right: format!("{:?}", b),
                    });
                }
            }
        }
    }
    Ok(())
}

pub fn build_with(
    graph: &mut ComponentGraph,
    input_spaces: &IndexMap<String, Space>,
    device_map: &DeviceMap,
    mode: BackendMode,
    opts: &BuildOptions,
) -> GraphResult<(OpRegistry, BuildStats)> {
    let started = Instant::now();

    // Re-validate caller spaces against the assembly's resolution.
    for entry in graph.api.values() {
        for (i, rec) in entry.in_records.iter().enumerate() {
            let param = &entry.param_names[i];
            let resolved = graph.records[rec.0].space.clone().ok_or_else(|| {
                GraphError::UnknownParamSpace { api: entry.name.clone(), param: param.clone() }
            })?;
            if let Some(given) = input_spaces
                .get(&format!("{}.{}", entry.name, param))
                .or_else(|| input_spaces.get(param))
            {
                if !space_compatible(given, &resolved) {
                    return Err(GraphError::SpaceConflict {
                        what: format!("API input '{}.{}'", entry.name, param),
                        left: format!("{:?}", given),
                        right: format!("{:?}", resolved),
                    });
                }
            }
        }
    }

    let mut b = Builder {
        graph,
        device_map,
        mode,
        opts: opts.clone(),
        rec_space: graph.records.iter().map(|r| r.space.clone()).collect(),
        rec_nodes: HashMap::new(),
        const_nodes: HashMap::new(),
        staged: StagedSink::default(),
        vars: VarStore::new(),
        ledger: BuildLedger::default(),
        steps: Vec::new(),
        site_step: HashMap::new(),
        api_effects: HashMap::new(),
        fn_sites: IndexMap::new(),
        seen_fn_spaces: HashMap::new(),
        trace_rng: rng::derive(opts.seed, "/build/trace"),
        traced_ops: 0,
    };

    b.create_placeholders()?;
    b.index_fn_sites();
    b.propagate()?;

    let registry = b.finish(started)?;

    // Write inferred spaces back into the meta-graph records.
    for (i, s) in registry.rec_space.iter() {
        graph.records[*i].space = Some(s.clone());
    }
    let stats = registry.stats.clone();
    Ok((registry, stats))
}

/// Spaces conflict only on structure, dtype, shape, or rank flags; bounds
/// and category metadata may differ between declared and inferred spaces.
pub fn space_compatible(a: &Space, b: &Space) -> bool {
    let fa = a.flatten();
    let fb = b.flatten();
    if fa.len() != fb.len() {
        return false;
    }
    fa.iter().zip(&fb).all(|((ka, sa), (kb, sb))| {
        ka == kb
            && sa.dtype().ok() == sb.dtype().ok()
            && sa.box_shape().ok() == sb.box_shape().ok()
            && sa.has_batch_rank() == sb.has_batch_rank()
            && sa.has_time_rank() == sb.has_time_rank()
    })
}

impl<'g> Builder<'g> {
    fn scope_path(scope: &str) -> Vec<String> {
        scope.trim_start_matches('/').split('/').skip(1).map(str::to_string).collect()
    }

    fn component_at(&self, scope: &str) -> &'g Component {
        self.graph
            .root
            .descend(&Self::scope_path(scope))
            .expect("call sites always reference composed components")
    }

    fn create_placeholders(&mut self) -> GraphResult<()> {
        if self.mode != BackendMode::Staged {
            return Ok(());
        }
        let root_scope = &self.graph.components[0].scope;
        let root_device = self.device_map.ops_device(
            root_scope,
            self.graph.components[0].device.as_deref(),
            None,
        );
        let api_entries: Vec<(Vec<Rec>, Vec<String>)> = self
            .graph
            .api
            .values()
            .map(|e| (e.in_records.clone(), e.param_names.clone()))
            .collect();
        for (in_records, param_names) in api_entries {
            for (rec, param) in in_records.iter().zip(&param_names) {
                let space = self.rec_space[rec.0].clone().expect("validated above");
                let mut nodes = Vec::new();
                for (leaf_key, _) in space.flatten() {
                    let key = format!("/{}{}", param, leaf_key);
                    nodes.push(self.staged.push(
                        NodeOp::Placeholder { key },
                        vec![],
                        &root_device,
                    ));
                }
                self.rec_nodes.insert(rec.0, nodes);
            }
        }
        Ok(())
    }

    fn index_fn_sites(&mut self) {
        for info in &self.graph.components {
            self.fn_sites.insert(info.scope.clone(), Vec::new());
        }
        for site in &self.graph.sites {
            if site.kind == SiteKind::GraphFn {
                self.fn_sites.get_mut(&site.callee).expect("known scope").push(site.id);
            }
        }
    }

    /// Derive spaces for structural records whose parents/children are known.
    fn derive_structural(&mut self) -> GraphResult<bool> {
        let mut progress = false;
        for i in 0..self.graph.records.len() {
            if self.rec_space[i].is_some() {
                continue;
            }
            match &self.graph.records[i].origin {
                RecordOrigin::Item { parent, key } => {
                    if let Some(pspace) = self.rec_space[parent.0].clone() {
                        let child = item_space(&pspace, key)?;
                        self.rec_space[i] = Some(child.clone());
                        if self.mode == BackendMode::Staged {
                            let nodes = self.item_nodes(parent.0, &pspace, key)?;
                            self.rec_nodes.insert(i, nodes);
                        }
                        progress = true;
                    }
                }
                RecordOrigin::Nest { children } => {
                    if children.iter().all(|(_, r)| self.rec_space[r.0].is_some()) {
                        let mut pairs = Vec::new();
                        let mut node_pairs = Vec::new();
                        for (key, r) in children {
                            let cs = self.rec_space[r.0].clone().unwrap();
                            for (leaf_key, leaf_space) in cs.flatten() {
                                pairs.push((format!("/{}{}", key, leaf_key), leaf_space.clone()));
                            }
                            if self.mode == BackendMode::Staged {
                                let nodes = self.rec_nodes.get(&r.0).cloned().ok_or_else(|| {
                                    GraphError::Invalid("nested record lost its nodes".into())
                                })?;
                                for ((leaf_key, _), n) in cs.flatten().iter().zip(nodes) {
                                    node_pairs.push((format!("/{}{}", key, leaf_key), n));
                                }
                            }
                        }
                        pairs.sort_by(|a, b| a.0.cmp(&b.0));
                        node_pairs.sort_by(|a, b| a.0.cmp(&b.0));
                        self.rec_space[i] = Some(Space::unflatten(pairs)?);
                        if self.mode == BackendMode::Staged {
                            self.rec_nodes
                                .insert(i, node_pairs.into_iter().map(|(_, n)| n).collect());
                        }
                        progress = true;
                    }
                }
                _ => {}
            }
        }
        Ok(progress)
    }

    fn item_nodes(&self, parent: usize, pspace: &Space, key: &str) -> GraphResult<Vec<NodeId>> {
        let parent_nodes = self
            .rec_nodes
            .get(&parent)
            .ok_or_else(|| GraphError::Invalid("item parent lost its nodes".into()))?;
        let prefix = format!("/{}", key);
        let mut out = Vec::new();
        for ((leaf_key, _), node) in pspace.flatten().iter().zip(parent_nodes) {
            if leaf_key == &prefix || leaf_key.starts_with(&format!("{}/", prefix)) {
                out.push(*node);
            }
        }
        if out.is_empty() {
            return Err(GraphError::Invalid(format!("no leaves under item key '{}'", key)));
        }
        Ok(out)
    }

    /// Sites whose argument spaces must be known before a component's
    /// variables are created: those of the declared variable-input
    /// functions, or of every called function by default.
    fn gate_sites(&self, scope: &str) -> Vec<SiteId> {
        let component = self.component_at(scope);
        let gate = component.var_input_fns();
        self.fn_sites[scope]
            .iter()
            .copied()
            .filter(|s| match gate {
                None => true,
                Some(names) => names.iter().any(|n| n == &self.graph.site(*s).name),
            })
            .collect()
    }

    fn site_ready(&self, sid: SiteId) -> bool {
        self.graph.site(sid).inputs.iter().all(|r| self.rec_space[r.0].is_some())
    }

    fn site_deferred(&self, sid: SiteId) -> bool {
        let site = self.graph.site(sid);
        self.component_at(&site.callee)
            .graph_fn(&site.name)
            .map(|f| f.defer)
            .unwrap_or(false)
    }

    /// Breadth-first sweep: create variables once a component's gating
    /// spaces are known, then materialize each call site as its own inputs
    /// become known. Deferred functions run in a final wave.
    fn propagate(&mut self) -> GraphResult<()> {
        let mut site_built: HashMap<usize, bool> = self
            .graph
            .sites
            .iter()
            .filter(|s| s.kind == SiteKind::GraphFn)
            .map(|s| (s.id.0, false))
            .collect();
        let mut vars_created = vec![false; self.graph.components.len()];

        for deferred_phase in [false, true] {
            loop {
                let mut progress = self.derive_structural()?;
                let mut order: Vec<usize> = (0..self.graph.components.len()).collect();
                if self.opts.reverse_queue {
                    order.reverse();
                }
                for ci in order {
                    let info = self.graph.components[ci].clone();
                    if !vars_created[ci]
                        && self.gate_sites(&info.scope).iter().all(|s| self.site_ready(*s))
                    {
                        self.create_component_vars(ci)?;
                        vars_created[ci] = true;
                        progress = true;
                    }
                    if !vars_created[ci] {
                        continue;
                    }
                    for sid in self.fn_sites[&info.scope].clone() {
                        if site_built[&sid.0]
                            || self.site_deferred(sid) != deferred_phase
                            || !self.site_ready(sid)
                        {
                            continue;
                        }
                        self.materialize_site(&info.scope, info.device.as_deref(), sid)?;
                        site_built.insert(sid.0, true);
                        progress = true;
                    }
                }
                let vars_pending = vars_created.iter().any(|v| !v);
                let sites_pending = site_built.iter().any(|(sid, built)| {
                    !built && self.site_deferred(SiteId(*sid)) == deferred_phase
                });
                if !sites_pending && (deferred_phase || !vars_pending) {
                    break;
                }
                if !progress {
                    return Err(self.stall_error(&site_built, &vars_created, deferred_phase));
                }
            }
        }
        if let Some(ci) = vars_created.iter().position(|v| !v) {
            return Err(GraphError::BuildStall {
                diagnostics: format!(
                    "{} never reached input-completeness for variable creation",
                    self.graph.components[ci].scope
                ),
            });
        }
        Ok(())
    }

    fn stall_error(
        &self,
        site_built: &HashMap<usize, bool>,
        vars_created: &[bool],
        deferred_phase: bool,
    ) -> GraphError {
        // Pending call sites and their unsatisfied arguments, grouped per
        // component; components still waiting for variable creation also
        // block their sites.
        let mut pending: Vec<(String, Vec<String>)> = Vec::new();
        for (ci, info) in self.graph.components.iter().enumerate() {
            let mut missing = Vec::new();
            for s in &self.fn_sites[&info.scope] {
                if site_built[&s.0] || self.site_deferred(*s) != deferred_phase {
                    continue;
                }
                let site = self.graph.site(*s);
                let mut any = false;
                for (arg, r) in site.inputs.iter().enumerate() {
                    if self.rec_space[r.0].is_none() {
                        missing.push(format!("{}(arg {})", site.name, arg));
                        any = true;
                    }
                }
                if !any && !vars_created[ci] {
                    missing.push(format!("{} (variables pending)", site.name));
                }
            }
            if !missing.is_empty() {
                pending.push((info.scope.clone(), missing));
            }
        }
        // Cycle detection over pending components: an edge A -> B when one
        // of A's pending sites waits on a record produced by B.
        let pending_set: HashSet<&String> = pending.iter().map(|(s, _)| s).collect();
        let mut edges: HashMap<&String, HashSet<String>> = HashMap::new();
        for (scope, _) in &pending {
            for s in &self.fn_sites[scope] {
                if site_built[&s.0] {
                    continue;
                }
                for r in &self.graph.site(*s).inputs {
                    if self.rec_space[r.0].is_none() {
                        if let Some(producer) = self.record_producer(r.0) {
                            if pending_set.contains(&producer) && &producer != scope {
                                edges.entry(scope).or_default().insert(producer);
                            }
                        }
                    }
                }
            }
        }
        if let Some(cycle) =
            find_cycle(&pending.iter().map(|(s, _)| s.clone()).collect::<Vec<_>>(), &edges)
        {
            return GraphError::CyclicSpaceDependency(cycle.join(" -> "));
        }
        let diagnostics = pending
            .iter()
            .map(|(scope, missing)| format!("{} missing [{}]", scope, missing.join(", ")))
            .collect::<Vec<_>>()
            .join("; ");
        GraphError::BuildStall { diagnostics }
    }

    /// Scope of the component whose call site ultimately produces a record.
    fn record_producer(&self, rec: usize) -> Option<String> {
        match &self.graph.records[rec].origin {
            RecordOrigin::GraphFnOutput { site, .. } => {
                Some(self.graph.site(*site).callee.clone())
            }
            RecordOrigin::Item { parent, .. } => self.record_producer(parent.0),
            RecordOrigin::Nest { children } => {
                children.iter().find_map(|(_, r)| self.record_producer(r.0))
            }
            _ => None,
        }
    }

    /// Merge argument spaces of the gating call sites per function,
    /// detecting conflicts, then run the variable builder.
    fn create_component_vars(&mut self, ci: usize) -> GraphResult<()> {
        let info = self.graph.components[ci].clone();
        let component = self.component_at(&info.scope);

        let mut fn_spaces: IndexMap<String, Vec<Space>> = IndexMap::new();
        for sid in self.gate_sites(&info.scope) {
            let site = self.graph.site(sid);
            let spaces: Vec<Space> = site
                .inputs
                .iter()
                .map(|r| self.rec_space[r.0].clone().expect("gate checked ready"))
                .collect();
            merge_fn_spaces(&mut fn_spaces, &info.scope, &site.name, spaces)?;
        }

        self.ledger.mark_vars_created(&info.scope)?;
        if let Some(builder) = component.var_builder().cloned() {
            let mut ctx = VarCtx {
                scope: info.scope.clone(),
                device: self.device_map.vars_device(&info.scope, info.device.as_deref()),
                rng: rng::derive(self.opts.seed, &info.scope),
                vars: &mut self.vars,
                input_spaces: &fn_spaces,
            };
            builder(&mut ctx)?;
        }
        Ok(())
    }

    fn probe_for(&self, rec: usize, space: &Space) -> GraphResult<Value> {
        if let RecordOrigin::Constant = self.graph.records[rec].origin {
            if let Some(t) = self.graph.constants.get(&rec) {
                return Ok(Value::Leaf(t.clone()));
            }
        }
        let batch = if space.has_batch_rank() { Some(PROBE_BATCH) } else { None };
        let time = if space.has_time_rank() { Some(PROBE_TIME) } else { None };
        Ok(space.zeros(batch, time)?)
    }

    fn const_node(&mut self, rec: usize, device: &str) -> NodeId {
        if let Some(n) = self.const_nodes.get(&rec) {
            return *n;
        }
        let t = self.graph.constants.get(&rec).expect("constant recorded").clone();
        let n = self.staged.push_const(t, device);
        self.const_nodes.insert(rec, n);
        n
    }

    fn materialize_site(
        &mut self,
        scope: &str,
        declared_device: Option<&str>,
        sid: SiteId,
    ) -> GraphResult<()> {
        let site: CallSite = self.graph.site(sid).clone();
        let component = self.component_at(scope);
        let fun: &GraphFn = component.graph_fn(&site.name).ok_or_else(|| {
            GraphError::UnknownGraphFn { scope: scope.to_string(), name: site.name.clone() }
        })?;
        // Argument spaces of repeated calls to one function must agree.
        let site_spaces: Vec<Space> = site
            .inputs
            .iter()
            .map(|r| self.rec_space[r.0].clone().expect("site checked ready"))
            .collect();
        merge_fn_spaces(
            self.seen_fn_spaces.entry(scope.to_string()).or_default(),
            scope,
            &site.name,
            site_spaces,
        )?;
        let kernel = fun.kernel.clone();
        let n_outputs = fun.n_outputs;
        let flatten_inputs = fun.flatten_inputs;
        let device =
            self.device_map
                .ops_device(scope, declared_device, site.device_override.as_deref());

        // Assemble probe values and (staged) leaf nodes per argument.
        let mut values: Vec<Tensor> = Vec::new();
        let mut flags: Vec<(bool, bool)> = Vec::new();
        let mut node_of: Vec<Option<NodeId>> = Vec::new();
        let mut args: Vec<KernelArg> = Vec::new();
        let mut in_spaces = Vec::new();

        for rec in &site.inputs {
            let space = self.rec_space[rec.0].clone().expect("ready");
            if !flatten_inputs && space.is_container() {
                return Err(GraphError::Invalid(format!(
                    "graph fn '{}::{}' declares unflattened inputs but received a container",
                    scope, site.name
                )));
            }
            let probe = self.probe_for(rec.0, &space)?;
            let leaf_nodes: Vec<NodeId> = if self.mode == BackendMode::Staged {
                match &self.graph.records[rec.0].origin {
                    RecordOrigin::Constant => vec![self.const_node(rec.0, &device)],
                    _ => self.rec_nodes.get(&rec.0).cloned().ok_or_else(|| {
                        GraphError::Invalid(format!(
                            "record {} reached '{}::{}' without staged nodes",
                            rec.0, scope, site.name
                        ))
                    })?,
                }
            } else {
                Vec::new()
            };
            let mut keys = Vec::new();
            let mut leaves = Vec::new();
            for (i, ((leaf_key, leaf_space), (_, leaf_tensor))) in
                space.flatten().iter().zip(probe.flatten()).enumerate()
            {
                keys.push(leaf_key.clone());
                values.push(leaf_tensor.clone());
                flags.push((leaf_space.has_batch_rank(), leaf_space.has_time_rank()));
                node_of.push(if self.mode == BackendMode::Staged {
                    Some(leaf_nodes[i])
                } else {
                    None
                });
                leaves.push(TRef(values.len() - 1));
            }
            args.push(KernelArg { keys, leaves });
            in_spaces.push(space);
        }

        let mut entries: Vec<TapeEntry> = Vec::new();
        let mut var_reads = HashMap::new();
        let mut effects: Vec<NodeId> = Vec::new();
        let (ctx_mode, staged_ref) = match self.mode {
            BackendMode::Staged => (CtxMode::TraceStaged, Some(&mut self.staged)),
            BackendMode::DefineByRun => (CtxMode::TraceInfer, None),
        };
        let mut ctx = KernelCtx {
            mode: ctx_mode,
            scope: scope.to_string(),
            device: device.clone(),
            values: &mut values,
            flags: &mut flags,
            entries: &mut entries,
            node_of: &mut node_of,
            staged: staged_ref,
            vars: &mut self.vars,
            rng: &mut self.trace_rng,
            var_reads: &mut var_reads,
            effects: &mut effects,
        };
        let outs = kernel(&mut ctx, &args)?;
        if outs.len() != n_outputs {
            return Err(GraphError::Invalid(format!(
                "graph fn '{}::{}' declared {} outputs but produced {}",
                scope,
                site.name,
                n_outputs,
                outs.len()
            )));
        }
        self.traced_ops += entries.len();
        self.ledger.mark_fn_materialized(scope, &site.name)?;

        // Bind output records: spaces plus per-leaf staged nodes.
        let mut out_spaces = Vec::new();
        for (slot, out) in outs.iter().enumerate() {
            let rec = site.outputs[slot];
            match out {
                KernelOut::Leaf(h) => {
                    let (b, t) = flags[h.0];
                    let space = leaf_space_of(&values[h.0], b, t);
                    self.rec_space[rec.0] = Some(space.clone());
                    out_spaces.push(space);
                    if self.mode == BackendMode::Staged {
                        let n = node_of[h.0].ok_or_else(|| {
                            GraphError::Invalid("kernel output lost its node".into())
                        })?;
                        self.rec_nodes.insert(rec.0, vec![n]);
                    }
                }
                KernelOut::Group(pairs) => {
                    let mut sorted: Vec<(String, TRef)> =
                        pairs.iter().map(|(k, h)| (k.clone(), *h)).collect();
                    sorted.sort_by(|a, b| a.0.cmp(&b.0));
                    let mut space_pairs = Vec::new();
                    let mut nodes = Vec::new();
                    for (k, h) in &sorted {
                        let (bb, tt) = flags[h.0];
                        space_pairs.push((k.clone(), leaf_space_of(&values[h.0], bb, tt)));
                        if self.mode == BackendMode::Staged {
                            nodes.push(node_of[h.0].ok_or_else(|| {
                                GraphError::Invalid("kernel output lost its node".into())
                            })?);
                        }
                    }
                    let space = Space::unflatten(space_pairs)?;
                    self.rec_space[rec.0] = Some(space.clone());
                    out_spaces.push(space);
                    if self.mode == BackendMode::Staged {
                        self.rec_nodes.insert(rec.0, nodes);
                    }
                }
            }
        }
        self.api_effects.entry(site.root_api.clone()).or_default().extend(effects);

        if self.mode == BackendMode::DefineByRun {
            let step = self.steps.len();
            self.steps.push(DbrStep {
                site: sid.0,
                scope: scope.to_string(),
                fn_name: site.name.clone(),
                kernel,
                inputs: site.inputs.iter().map(|r| r.0).collect(),
                outputs: site.outputs.iter().map(|r| r.0).collect(),
                in_spaces,
                out_spaces,
                device,
            });
            self.site_step.insert(sid.0, step);
        }
        Ok(())
    }

    fn finish(mut self, started: Instant) -> GraphResult<OpRegistry> {
        // Per-API runtime descriptors.
        let mut apis = IndexMap::new();
        for entry in self.graph.api.values() {
            let params: Vec<(String, Space)> = entry
                .param_names
                .iter()
                .zip(&entry.in_records)
                .map(|(n, r)| (n.clone(), self.rec_space[r.0].clone().expect("resolved")))
                .collect();

            let mut placeholders = Vec::new();
            let mut out_staged = Vec::new();
            let mut effects = Vec::new();
            let mut required = Vec::new();
            let mut steps = Vec::new();

            if self.mode == BackendMode::Staged {
                for (rec, param) in entry.in_records.iter().zip(&entry.param_names) {
                    let space = self.rec_space[rec.0].clone().unwrap();
                    let nodes = self.rec_nodes[&rec.0].clone();
                    for ((leaf_key, leaf_space), node) in space.flatten().iter().zip(nodes) {
                        placeholders.push((
                            format!("/{}{}", param, leaf_key),
                            (*leaf_space).clone(),
                            node,
                        ));
                    }
                }
                for rec in &entry.out_records {
                    let space = self.rec_space[rec.0].clone().ok_or_else(|| {
                        GraphError::Invalid(format!(
                            "output record {} of API '{}' has no inferred space",
                            rec.0, entry.name
                        ))
                    })?;
                    let nodes = self.rec_nodes.get(&rec.0).cloned().ok_or_else(|| {
                        GraphError::Invalid(format!(
                            "output record {} of API '{}' was never materialized",
                            rec.0, entry.name
                        ))
                    })?;
                    out_staged.push((space, nodes));
                }
                effects = self.api_effects.remove(&entry.name).unwrap_or_default();
                let mut seeds: Vec<NodeId> =
                    out_staged.iter().flat_map(|(_, ns)| ns.iter().copied()).collect();
                seeds.extend(&effects);
                required = ancestors(&self.staged.nodes, &seeds);
            } else {
                for sid in site_order_for_api(self.graph, &entry.name) {
                    if let Some(step) = self.site_step.get(&sid) {
                        steps.push(*step);
                    }
                }
            }

            apis.insert(
                entry.name.clone(),
                ApiRuntime {
                    name: entry.name.clone(),
                    params,
                    in_records: entry.in_records.iter().map(|r| r.0).collect(),
                    out_records: entry.out_records.iter().map(|r| r.0).collect(),
                    placeholders,
                    out_staged,
                    effects,
                    required,
                    steps,
                    root_sites: entry.sites.iter().map(|s| s.0).collect(),
                },
            );
        }

        // Record sources for define-by-run resolution.
        let mut sources = HashMap::new();
        let mut dbr_constants = Vec::new();
        if self.mode == BackendMode::DefineByRun {
            for record in &self.graph.records {
                let src = match &record.origin {
                    RecordOrigin::ApiInput { api, param } => {
                        DbrSource::Param { api: api.clone(), param: *param }
                    }
                    RecordOrigin::GraphFnOutput { site, slot } => {
                        match self.site_step.get(&site.0) {
                            Some(step) => DbrSource::Step { step: *step, slot: *slot },
                            None => continue,
                        }
                    }
                    RecordOrigin::Constant => {
                        let t = self.graph.constants[&record.id.0].clone();
                        dbr_constants.push(t);
                        DbrSource::Const(dbr_constants.len() - 1)
                    }
                    RecordOrigin::Item { parent, key } => {
                        DbrSource::Item { parent: parent.0, key: key.clone() }
                    }
                    RecordOrigin::Nest { children } => DbrSource::Nest {
                        children: children.iter().map(|(k, r)| (k.clone(), r.0)).collect(),
                    },
                };
                sources.insert(record.id.0, src);
            }
        }

        let sites: Vec<SiteLite> = self
            .graph
            .sites
            .iter()
            .map(|s| SiteLite {
                kind: s.kind,
                name: s.name.clone(),
                callee: s.callee.clone(),
                children: s.children.iter().map(|c| c.0).collect(),
                step: self.site_step.get(&s.id.0).copied(),
            })
            .collect();

        let rec_space: HashMap<usize, Space> = self
            .rec_space
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.clone().map(|s| (i, s)))
            .collect();

        let op_count = match self.mode {
            BackendMode::Staged => self.staged.nodes.len(),
            BackendMode::DefineByRun => self.traced_ops,
        };
        let stats = BuildStats {
            component_count: self.graph.components.len(),
            op_count,
            variable_count: self.vars.len(),
            meta_graph_time: self.graph.assembly_time,
            build_time: started.elapsed(),
        };

        let constants = match self.mode {
            BackendMode::Staged => std::mem::take(&mut self.staged.constants),
            BackendMode::DefineByRun => dbr_constants,
        };

        Ok(OpRegistry {
            mode: self.mode,
            nodes: std::mem::take(&mut self.staged.nodes),
            constants,
            apis,
            variables: self.vars,
            steps: self.steps,
            sources,
            rec_space,
            sites,
            ledger: self.ledger,
            stats,
        })
    }
}

/// Graph-function sites of one root API in traversal order.
fn site_order_for_api(graph: &ComponentGraph, api: &str) -> Vec<usize> {
    graph
        .sites
        .iter()
        .filter(|s| s.root_api == api && s.kind == SiteKind::GraphFn)
        .map(|s| s.id.0)
        .collect()
}

/// Ancestor closure over node inputs, ascending. Node ids are assigned in
/// trace order, so ascending id order is a valid evaluation order.
fn ancestors(nodes: &[StagedNode], seeds: &[NodeId]) -> Vec<NodeId> {
    let mut seen = vec![false; nodes.len()];
    let mut stack: Vec<NodeId> = seeds.to_vec();
    while let Some(n) = stack.pop() {
        if seen[n] {
            continue;
        }
        seen[n] = true;
        for i in &nodes[n].inputs {
            if !seen[*i] {
                stack.push(*i);
            }
        }
        // Gradient nodes additionally depend on every ancestor of their loss
        // input, which the input edge already covers.
    }
    (0..nodes.len()).filter(|i| seen[*i]).collect()
}

fn item_space(parent: &Space, key: &str) -> GraphResult<Space> {
    if let Some(c) = parent.child(key) {
        return Ok(c.clone());
    }
    if let Ok(i) = key.parse::<usize>() {
        if let Some(c) = parent.item(i) {
            return Ok(c.clone());
        }
    }
    Err(GraphError::Invalid(format!(
        "container space has no entry '{}' (space: {:?})",
        key, parent
    )))
}

fn find_cycle(
    pending: &[String],
    edges: &HashMap<&String, HashSet<String>>,
) -> Option<Vec<String>> {
    // Tiny DFS cycle finder over the pending-component wait graph.
    fn dfs(
        node: &String,
        edges: &HashMap<&String, HashSet<String>>,
        visiting: &mut Vec<String>,
        done: &mut HashSet<String>,
    ) -> Option<Vec<String>> {
        if let Some(pos) = visiting.iter().position(|v| v == node) {
            let mut cycle = visiting[pos..].to_vec();
            cycle.push(node.clone());
            return Some(cycle);
        }
        if done.contains(node) {
            return None;
        }
        visiting.push(node.clone());
        if let Some(nexts) = edges.get(node) {
            for next in nexts {
                if let Some(c) = dfs(next, edges, visiting, done) {
                    return Some(c);
                }
            }
        }
        visiting.pop();
        done.insert(node.clone());
        None
    }
    let mut done = HashSet::new();
    for p in pending {
        if let Some(c) = dfs(p, edges, &mut Vec::new(), &mut done) {
            return Some(c);
        }
    }
    None
}
