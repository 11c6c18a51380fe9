//! The component abstraction.
//!
//! A component owns subcomponents, registered API methods, graph functions,
//! and (after the build) variables. API methods are the only legal channel
//! between components: their bodies run once during assembly and may only
//! touch the component's own graph functions, its own other API methods, and
//! the API methods of its direct subcomponents.
//!
//! Graph functions hold the numeric kernels. A kernel never runs before the
//! owning component's variables exist; the build enforces that barrier.
//!
//! Components are plain data plus shared closures: composition mutates them,
//! assembly and build only read them.

use std::sync::Arc;

use indexmap::IndexMap;
use rlstage_core::Space;

use crate::error::{GraphError, GraphResult};
use crate::kernel::{KernelArg, KernelCtx, KernelOut};
use crate::meta::{ApiCtx, Rec};

pub type ApiBody =
    Arc<dyn Fn(&mut ApiCtx<'_>, &[Rec]) -> GraphResult<Vec<Rec>> + Send + Sync>;
pub type Kernel =
    Arc<dyn Fn(&mut KernelCtx<'_>, &[KernelArg]) -> GraphResult<Vec<KernelOut>> + Send + Sync>;
pub type VarBuilder = Arc<dyn Fn(&mut crate::build::VarCtx<'_>) -> GraphResult<()> + Send + Sync>;

#[derive(Clone)]
pub struct ApiParam {
    pub name: String,
    pub default_space: Option<Space>,
}

impl ApiParam {
    pub fn required(name: &str) -> ApiParam {
        ApiParam { name: name.to_string(), default_space: None }
    }

    pub fn with_default(name: &str, space: Space) -> ApiParam {
        ApiParam { name: name.to_string(), default_space: Some(space) }
    }
}

#[derive(Clone)]
pub struct ApiMethod {
    pub name: String,
    pub params: Vec<ApiParam>,
    pub body: ApiBody,
}

#[derive(Clone)]
pub struct GraphFn {
    pub name: String,
    /// Number of op records the function produces.
    pub n_outputs: usize,
    /// Container arguments are flattened into per-leaf tensors before the
    /// kernel runs (the kernel sees flat keys alongside the leaves).
    pub flatten_inputs: bool,
    /// Materialize after every space-driven component has been built. Used
    /// by functions that resolve variable *sets* (e.g. weight synchronizers)
    /// rather than consuming tensor inputs.
    pub defer: bool,
    pub kernel: Kernel,
}

pub struct Component {
    name: String,
    device: Option<String>,
    subs: IndexMap<String, Component>,
    apis: IndexMap<String, ApiMethod>,
    graph_fns: IndexMap<String, GraphFn>,
    var_builder: Option<VarBuilder>,
    var_input_fns: Option<Vec<String>>,
}

impl Component {
    pub fn new(name: &str) -> GraphResult<Component> {
        if name.is_empty() || name.contains('/') || name.contains(':') {
            return Err(GraphError::InvalidName(name.to_string()));
        }
        Ok(Component {
            name: name.to_string(),
            device: None,
            subs: IndexMap::new(),
            apis: IndexMap::new(),
            graph_fns: IndexMap::new(),
            var_builder: None,
            var_input_fns: None,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn device(&self) -> Option<&str> {
        self.device.as_deref()
    }

    /// Assign a device label for this component's ops and variables.
    /// Subcomponents inherit it unless they declare their own.
    pub fn set_device(&mut self, label: &str) {
        self.device = Some(label.to_string());
    }

    /// Declare a method as part of the component's API.
    pub fn register_api(
        &mut self,
        name: &str,
        params: Vec<ApiParam>,
        body: ApiBody,
    ) -> GraphResult<()> {
        if self.apis.contains_key(name) {
            return Err(GraphError::DuplicateRegistration {
                scope: self.name.clone(),
                name: name.to_string(),
            });
        }
        self.apis.insert(name.to_string(), ApiMethod { name: name.to_string(), params, body });
        Ok(())
    }

    pub fn register_graph_fn(&mut self, name: &str, n_outputs: usize, kernel: Kernel) -> GraphResult<()> {
        self.register_graph_fn_opts(name, n_outputs, true, false, kernel)
    }

    pub fn register_graph_fn_opts(
        &mut self,
        name: &str,
        n_outputs: usize,
        flatten_inputs: bool,
        defer: bool,
        kernel: Kernel,
    ) -> GraphResult<()> {
        if self.graph_fns.contains_key(name) {
            return Err(GraphError::DuplicateRegistration {
                scope: self.name.clone(),
                name: name.to_string(),
            });
        }
        self.graph_fns.insert(
            name.to_string(),
            GraphFn { name: name.to_string(), n_outputs, flatten_inputs, defer, kernel },
        );
        Ok(())
    }

    /// Hook invoked at build time once the component is input-complete.
    pub fn set_var_builder(&mut self, f: VarBuilder) {
        self.var_builder = Some(f);
    }

    pub fn var_builder(&self) -> Option<&VarBuilder> {
        self.var_builder.as_ref()
    }

    /// Restrict which graph functions gate variable creation. By default
    /// every called function's input spaces must be known before
    /// `create_variables` runs; components whose API input spaces depend on
    /// outputs of their own other methods (iterated inference) declare the
    /// subset that actually sizes their state. An empty list makes variable
    /// creation unconditional.
    pub fn set_var_input_fns(&mut self, fns: &[&str]) {
        self.var_input_fns = Some(fns.iter().map(|s| s.to_string()).collect());
    }

    pub fn var_input_fns(&self) -> Option<&[String]> {
        self.var_input_fns.as_deref()
    }

    /// Nest a child component. The child keeps its name as a scope segment;
    /// taking it by value makes reparenting unrepresentable.
    pub fn add_subcomponent(&mut self, child: Component) -> GraphResult<()> {
        if self.subs.contains_key(&child.name) {
            return Err(GraphError::NameCollision {
                scope: self.name.clone(),
                name: child.name.clone(),
            });
        }
        self.subs.insert(child.name.clone(), child);
        Ok(())
    }

    pub fn sub(&self, name: &str) -> Option<&Component> {
        self.subs.get(name)
    }

    pub fn sub_mut(&mut self, name: &str) -> Option<&mut Component> {
        self.subs.get_mut(name)
    }

    pub fn subcomponents(&self) -> impl Iterator<Item = &Component> {
        self.subs.values()
    }

    pub fn api(&self, name: &str) -> Option<&ApiMethod> {
        self.apis.get(name)
    }

    pub fn apis(&self) -> impl Iterator<Item = &ApiMethod> {
        self.apis.values()
    }

    pub fn graph_fn(&self, name: &str) -> Option<&GraphFn> {
        self.graph_fns.get(name)
    }

    pub fn graph_fns(&self) -> impl Iterator<Item = &GraphFn> {
        self.graph_fns.values()
    }

    /// Resolve a component by scope-relative path segments.
    pub fn descend(&self, path: &[String]) -> Option<&Component> {
        let mut cur = self;
        for seg in path {
            cur = cur.sub(seg)?;
        }
        Some(cur)
    }

    /// Number of components in the subtree, including this one.
    pub fn count(&self) -> usize {
        1 + self.subs.values().map(Component::count).sum::<usize>()
    }

    /// Visit every component depth-first with its global scope and the
    /// device label in effect (own label or the nearest ancestor's).
    pub fn visit(&self, f: &mut dyn FnMut(&Component, &str, Option<&str>, usize)) {
        self.visit_inner("", None, 0, f);
    }

    fn visit_inner(
        &self,
        parent_scope: &str,
        inherited: Option<&str>,
        depth: usize,
        f: &mut dyn FnMut(&Component, &str, Option<&str>, usize),
    ) {
        let scope = format!("{}/{}", parent_scope, self.name);
        let device = self.device.as_deref().or(inherited);
        f(self, &scope, device, depth);
        for sub in self.subs.values() {
            sub.visit_inner(&scope, device, depth + 1, f);
        }
    }
}

/// Whether every graph-function call-site parameter of a component has an
/// inferred space. `known` carries one entry per call-site argument of the
/// component's functions; a component with no reachable graph functions is
/// vacuously complete.
pub fn check_input_completeness(known: &[Option<Space>]) -> bool {
    known.iter().all(Option::is_some)
}
