//! Meta-graph assembly.
//!
//! Calling every root API method exactly once with dimension-less op records
//! yields the backend-independent component graph: op records, call sites
//! (API calls and graph-function calls, as a tree per root method), and the
//! external API registry. No tensors, variables, or kernels are touched
//! here; spaces for API inputs attach from the provided input-space map (or
//! parameter defaults), everything else is inferred during the build.

use std::collections::{HashMap, HashSet};
use std::time::Duration;

use indexmap::IndexMap;
use rlstage_core::{Space, Tensor};

use crate::component::{ApiParam, Component};
use crate::error::{GraphError, GraphResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Rec(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SiteId(pub usize);

#[derive(Clone, Debug)]
pub enum RecordOrigin {
    ApiInput { api: String, param: usize },
    GraphFnOutput { site: SiteId, slot: usize },
    Constant,
    /// Structural access into a container record (dict key or tuple index).
    Item { parent: Rec, key: String },
    /// Structural grouping of records into a container. Numeric keys nest
    /// as tuple positions, everything else as dict keys.
    Nest { children: Vec<(String, Rec)> },
}

#[derive(Clone, Debug)]
pub struct OpRecord {
    pub id: Rec,
    pub origin: RecordOrigin,
    pub space: Option<Space>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SiteKind {
    Api,
    GraphFn,
}

#[derive(Clone, Debug)]
pub struct CallSite {
    pub id: SiteId,
    pub kind: SiteKind,
    /// Scope of the component whose body issued the call ("" for the
    /// assembly driver invoking root APIs).
    pub caller: String,
    /// Scope of the component owning the callee method or function.
    pub callee: String,
    pub name: String,
    pub inputs: Vec<Rec>,
    pub outputs: Vec<Rec>,
    /// Nested call sites in body order (API sites only).
    pub children: Vec<SiteId>,
    pub root_api: String,
    pub device_override: Option<String>,
}

#[derive(Clone, Debug)]
pub struct ApiEntry {
    pub name: String,
    pub param_names: Vec<String>,
    pub in_records: Vec<Rec>,
    pub out_records: Vec<Rec>,
    /// Top-level call sites in body order.
    pub sites: Vec<SiteId>,
    /// How many times the assembly driver ran the body (always 1).
    pub body_runs: usize,
}

#[derive(Clone, Debug)]
pub struct ComponentInfo {
    pub scope: String,
    pub name: String,
    pub device: Option<String>,
    pub depth: usize,
    pub parent: Option<usize>,
}

pub struct ComponentGraph {
    pub root: Component,
    pub records: Vec<OpRecord>,
    pub constants: HashMap<usize, Tensor>,
    pub sites: Vec<CallSite>,
    pub api: IndexMap<String, ApiEntry>,
    pub components: Vec<ComponentInfo>,
    pub assembly_time: Duration,
}

impl std::fmt::Debug for ComponentGraph {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ComponentGraph")
            .field("components", &self.components.len())
            .field("records", &self.records.len())
            .field("sites", &self.sites.len())
            .field("api", &self.api.keys().collect::<Vec<_>>())
            .finish()
    }
}

impl ComponentGraph {
    pub fn component_count(&self) -> usize {
        self.components.len()
    }

    /// Distinct cross-component call edges `(caller, callee, method)` in
    /// first-traversal order. Driver entries into root APIs are skipped.
    pub fn call_edges(&self) -> Vec<(String, String, String)> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for site in &self.sites {
            if site.caller.is_empty() || site.caller == site.callee {
                continue;
            }
            let key = (site.caller.clone(), site.callee.clone(), site.name.clone());
            if seen.insert(key.clone()) {
                out.push(key);
            }
        }
        out
    }

    pub fn record(&self, r: Rec) -> &OpRecord {
        &self.records[r.0]
    }

    pub fn site(&self, s: SiteId) -> &CallSite {
        &self.sites[s.0]
    }
}

struct Frame {
    /// Path of component names from the root (empty = root itself).
    path: Vec<String>,
    scope: String,
    visible: HashSet<Rec>,
    sites: Vec<SiteId>,
}

/// Assembly context handed to API method bodies.
pub struct ApiCtx<'a> {
    root: &'a Component,
    root_scope: String,
    records: &'a mut Vec<OpRecord>,
    constants: &'a mut HashMap<usize, Tensor>,
    sites: &'a mut Vec<CallSite>,
    frames: Vec<Frame>,
    device_stack: Vec<String>,
    current_root_api: String,
}

impl<'a> ApiCtx<'a> {
    fn current(&self) -> &Frame {
        self.frames.last().expect("assembly always has a frame")
    }

    fn current_component(&self) -> &Component {
        self.root
            .descend(&self.current().path)
            .expect("frame paths always resolve")
    }

    fn new_record(&mut self, origin: RecordOrigin, space: Option<Space>) -> Rec {
        let id = Rec(self.records.len());
        self.records.push(OpRecord { id, origin, space });
        self.frames.last_mut().unwrap().visible.insert(id);
        id
    }

    fn check_visible(&self, args: &[Rec], target: &str) -> GraphResult<()> {
        for r in args {
            if !self.current().visible.contains(r) {
                return Err(GraphError::EncapsulationViolation {
                    from: self.current().scope.clone(),
                    to: target.to_string(),
                });
            }
        }
        Ok(())
    }

    fn push_site(
        &mut self,
        kind: SiteKind,
        callee_scope: String,
        name: &str,
        inputs: Vec<Rec>,
    ) -> SiteId {
        let id = SiteId(self.sites.len());
        self.sites.push(CallSite {
            id,
            kind,
            caller: self.current().scope.clone(),
            callee: callee_scope,
            name: name.to_string(),
            inputs,
            outputs: Vec::new(),
            children: Vec::new(),
            root_api: self.current_root_api.clone(),
            device_override: self.device_stack.last().cloned(),
        });
        self.frames.last_mut().unwrap().sites.push(id);
        id
    }

    /// Call an API method of a direct subcomponent.
    pub fn call_api(&mut self, child: &str, method: &str, args: &[Rec]) -> GraphResult<Vec<Rec>> {
        let component = self.current_component();
        if component.sub(child).is_none() {
            return Err(GraphError::UnknownSubcomponent {
                scope: self.current().scope.clone(),
                name: child.to_string(),
            });
        }
        let mut path = self.current().path.clone();
        path.push(child.to_string());
        let scope = format!("{}/{}", self.current().scope, child);
        self.call_api_at(path, scope, method, args)
    }

    /// Call another API method of the current component.
    pub fn call_self_api(&mut self, method: &str, args: &[Rec]) -> GraphResult<Vec<Rec>> {
        let path = self.current().path.clone();
        let scope = self.current().scope.clone();
        self.call_api_at(path, scope, method, args)
    }

    fn call_api_at(
        &mut self,
        path: Vec<String>,
        scope: String,
        method: &str,
        args: &[Rec],
    ) -> GraphResult<Vec<Rec>> {
        let component = self.root.descend(&path).expect("resolved above");
        let api = component
            .api(method)
            .ok_or_else(|| GraphError::UnknownApi { scope: scope.clone(), name: method.to_string() })?
            .clone();
        if api.params.len() != args.len() {
            return Err(GraphError::ArityMismatch {
                api: format!("{}::{}", scope, method),
                given: args.len(),
                expected: api.params.len(),
            });
        }
        self.check_visible(args, &scope)?;
        let site = self.push_site(SiteKind::Api, scope.clone(), method, args.to_vec());

        self.frames.push(Frame {
            path,
            scope,
            visible: args.iter().copied().collect(),
            sites: Vec::new(),
        });
        let result = (api.body)(self, args);
        let frame = self.frames.pop().expect("frame pushed above");
        let outs = result?;
        self.sites[site.0].children = frame.sites;
        self.sites[site.0].outputs = outs.clone();
        // Returned records become visible to the caller.
        let caller = self.frames.last_mut().unwrap();
        for r in &outs {
            caller.visible.insert(*r);
        }
        Ok(outs)
    }

    /// Call one of the current component's graph functions.
    pub fn call_graph_fn(&mut self, name: &str, args: &[Rec]) -> GraphResult<Vec<Rec>> {
        let component = self.current_component();
        let fun = component.graph_fn(name).ok_or_else(|| GraphError::UnknownGraphFn {
            scope: self.current().scope.clone(),
            name: name.to_string(),
        })?;
        let n_outputs = fun.n_outputs;
        let scope = self.current().scope.clone();
        self.check_visible(args, &scope)?;
        let site = self.push_site(SiteKind::GraphFn, scope, name, args.to_vec());
        let outs: Vec<Rec> = (0..n_outputs)
            .map(|slot| self.new_record(RecordOrigin::GraphFnOutput { site, slot }, None))
            .collect();
        self.sites[site.0].outputs = outs.clone();
        Ok(outs)
    }

    /// A structural constant (attrs-level data lifted into the dataflow).
    pub fn constant(&mut self, t: Tensor) -> Rec {
        let space = leaf_space_of(&t, false, false);
        let rec = self.new_record(RecordOrigin::Constant, Some(space));
        self.constants.insert(rec.0, t);
        rec
    }

    pub fn const_f64(&mut self, v: f64) -> Rec {
        self.constant(Tensor::scalar_f64(v))
    }

    pub fn const_i64(&mut self, v: i64) -> Rec {
        self.constant(Tensor::scalar_i64(v))
    }

    /// Structural access to a dict field of a container record.
    pub fn get_item(&mut self, rec: Rec, key: &str) -> GraphResult<Rec> {
        self.check_visible(&[rec], "item access")?;
        Ok(self.new_record(RecordOrigin::Item { parent: rec, key: key.to_string() }, None))
    }

    /// Structural access to a tuple position of a container record.
    pub fn get_index(&mut self, rec: Rec, index: usize) -> GraphResult<Rec> {
        self.check_visible(&[rec], "item access")?;
        Ok(self.new_record(RecordOrigin::Item { parent: rec, key: index.to_string() }, None))
    }

    /// Group records into a dict-shaped record.
    pub fn nest_dict(&mut self, pairs: &[(&str, Rec)]) -> GraphResult<Rec> {
        let recs: Vec<Rec> = pairs.iter().map(|(_, r)| *r).collect();
        self.check_visible(&recs, "nest")?;
        let children = pairs.iter().map(|(k, r)| (k.to_string(), *r)).collect();
        Ok(self.new_record(RecordOrigin::Nest { children }, None))
    }

    /// Group records into a tuple-shaped record.
    pub fn nest_tuple(&mut self, items: &[Rec]) -> GraphResult<Rec> {
        self.check_visible(items, "nest")?;
        let children = items.iter().enumerate().map(|(i, r)| (i.to_string(), *r)).collect();
        Ok(self.new_record(RecordOrigin::Nest { children }, None))
    }

    /// Stamp a device label on every call site issued inside `f`.
    pub fn with_device<T>(
        &mut self,
        label: &str,
        f: impl FnOnce(&mut Self) -> GraphResult<T>,
    ) -> GraphResult<T> {
        self.device_stack.push(label.to_string());
        let out = f(self);
        self.device_stack.pop();
        out
    }
}

/// Leaf space describing a tensor (shape after stripping flagged leading
/// dims is handled by the caller; here the tensor shape is taken as-is).
pub fn leaf_space_of(t: &Tensor, batch: bool, time: bool) -> Space {
    let strip = batch as usize + time as usize;
    let tail: Vec<usize> = t.shape()[strip.min(t.rank())..].to_vec();
    match t.dtype() {
        rlstage_core::DType::F64 => {
            Space::FloatBox { shape: tail, low: None, high: None, batch, time }
        }
        rlstage_core::DType::I64 => {
            Space::IntBox { shape: tail, num_categories: None, batch, time }
        }
        rlstage_core::DType::Bool => Space::BoolBox { shape: tail, batch, time },
    }
}

/// Assemble the component graph: call every root API method once, recording
/// op records and call sites. `input_spaces` is keyed by parameter name,
/// with `"api.param"` entries taking precedence over bare names.
pub fn build_meta_graph(
    root: Component,
    input_spaces: &IndexMap<String, Space>,
) -> GraphResult<ComponentGraph> {
    let started = std::time::Instant::now();

    let mut components = Vec::new();
    let mut scope_index: HashMap<String, usize> = HashMap::new();
    root.visit(&mut |c, scope, device, depth| {
        let parent = scope.rfind('/').and_then(|cut| {
            if cut == 0 {
                None
            } else {
                scope_index.get(&scope[..cut]).copied()
            }
        });
        scope_index.insert(scope.to_string(), components.len());
        components.push(ComponentInfo {
            scope: scope.to_string(),
            name: c.name().to_string(),
            device: device.map(str::to_string),
            depth,
            parent,
        });
    });

    let root_scope = format!("/{}", root.name());
    let mut records = Vec::new();
    let mut constants = HashMap::new();
    let mut sites = Vec::new();
    let mut api_registry: IndexMap<String, ApiEntry> = IndexMap::new();

    let api_list: Vec<(String, Vec<ApiParam>)> = root
        .apis()
        .map(|a| (a.name.clone(), a.params.clone()))
        .collect();

    for (api_name, params) in &api_list {
        let mut ctx = ApiCtx {
            root: &root,
            root_scope: root_scope.clone(),
            records: &mut records,
            constants: &mut constants,
            sites: &mut sites,
            frames: vec![Frame {
                path: Vec::new(),
                scope: root_scope.clone(),
                visible: HashSet::new(),
                sites: Vec::new(),
            }],
            device_stack: Vec::new(),
            current_root_api: api_name.clone(),
        };
        // One input record per API input param, with its space resolved
        // from the caller-provided map or the parameter default.
        let mut in_records = Vec::new();
        for (i, p) in params.iter().enumerate() {
            let space = input_spaces
                .get(&format!("{}.{}", api_name, p.name))
                .or_else(|| input_spaces.get(&p.name))
                .cloned()
                .or_else(|| p.default_space.clone())
                .ok_or_else(|| GraphError::UnknownParamSpace {
                    api: api_name.clone(),
                    param: p.name.clone(),
                })?;
            in_records.push(ctx.new_record(
                RecordOrigin::ApiInput { api: api_name.clone(), param: i },
                Some(space),
            ));
        }
        let body = root.api(api_name).expect("listed above").body.clone();
        let outs = body(&mut ctx, &in_records)?;
        let frame = ctx.frames.pop().expect("root frame");
        let _ = ctx.root_scope;
        api_registry.insert(
            api_name.clone(),
            ApiEntry {
                name: api_name.clone(),
                param_names: params.iter().map(|p| p.name.clone()).collect(),
                in_records,
                out_records: outs,
                sites: frame.sites,
                body_runs: 1,
            },
        );
    }

    Ok(ComponentGraph {
        root,
        records,
        constants,
        sites,
        api: api_registry,
        components,
        assembly_time: started.elapsed(),
    })
}
