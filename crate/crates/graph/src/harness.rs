//! Sub-graph testing: build any single component from declared input spaces
//! and call its API methods with generated or hand-picked values.

use std::sync::Arc;

use indexmap::IndexMap;
use rlstage_core::{Space, Value};

use crate::build::{build, BackendMode, BuildStats, DeviceMap, OpRegistry};
use crate::component::Component;
use crate::error::GraphResult;
use crate::exec::GraphExecutor;
use crate::meta::{build_meta_graph, ComponentGraph};

/// Wraps assembly, build, and an executor around one component, so a
/// component is testable in isolation from any input spaces. Input spaces
/// are keyed by API parameter name (or `"api.param"` to disambiguate).
pub struct ComponentTest {
    pub graph: ComponentGraph,
    pub registry: Arc<OpRegistry>,
    pub exec: GraphExecutor,
    pub stats: BuildStats,
}

impl ComponentTest {
    pub fn new(
        component: Component,
        input_spaces: &[(&str, Space)],
        mode: BackendMode,
        seed: u64,
    ) -> GraphResult<ComponentTest> {
        let spaces: IndexMap<String, Space> =
            input_spaces.iter().map(|(k, s)| (k.to_string(), s.clone())).collect();
        let mut graph = build_meta_graph(component, &spaces)?;
        let (registry, stats) = build(&mut graph, &spaces, &DeviceMap::default(), mode)?;
        let registry = Arc::new(registry);
        let exec = GraphExecutor::new(registry.clone(), seed);
        Ok(ComponentTest { graph, registry, exec, stats })
    }

    pub fn test(&mut self, api: &str, args: &[Value]) -> GraphResult<Vec<Value>> {
        self.exec.execute(api, args)
    }

    pub fn executor(&mut self) -> &mut GraphExecutor {
        &mut self.exec
    }
}
