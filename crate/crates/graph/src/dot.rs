//! DOT export of a component graph: one node per component, clusters per
//! nesting level, one edge per distinct cross-component API/graph-fn call.
//! Output is deterministic: children and edges are sorted by scope path.

use crate::meta::ComponentGraph;

fn sanitize(label: &str) -> String {
    label.replace('"', "'")
}

/// Graphviz text for the component structure and its call edges.
pub fn export_dot(graph: &ComponentGraph) -> String {
    let mut out = String::from("digraph component_graph {\n");
    out.push_str("  rankdir = TB;\n  node [shape=box];\n");

    // Children of each component index, sorted by scope.
    let n = graph.components.len();
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, info) in graph.components.iter().enumerate() {
        if let Some(p) = info.parent {
            children[p].push(i);
        }
    }
    for c in &mut children {
        c.sort_by(|a, b| graph.components[*a].scope.cmp(&graph.components[*b].scope));
    }

    fn emit(
        graph: &ComponentGraph,
        children: &[Vec<usize>],
        idx: usize,
        indent: usize,
        out: &mut String,
    ) {
        let info = &graph.components[idx];
        let pad = "  ".repeat(indent);
        let device = info.device.as_deref().unwrap_or("default");
        let label = format!("{}\\n[{}]", sanitize(&info.name), sanitize(device));
        if children[idx].is_empty() {
            out.push_str(&format!("{}c{} [label=\"{}\"];\n", pad, idx, label));
        } else {
            out.push_str(&format!("{}subgraph cluster_{} {{\n", pad, idx));
            out.push_str(&format!("{}  label = \"{}\";\n", pad, sanitize(&info.scope)));
            out.push_str(&format!("{}  c{} [label=\"{}\"];\n", pad, idx, label));
            for &c in &children[idx] {
                emit(graph, children, c, indent + 1, out);
            }
            out.push_str(&format!("{}}}\n", pad));
        }
    }
    emit(graph, &children, 0, 1, &mut out);

    let index_of = |scope: &str| graph.components.iter().position(|c| c.scope == scope);
    let mut edges: Vec<(usize, usize, String)> = graph
        .call_edges()
        .into_iter()
        .filter_map(|(from, to, name)| Some((index_of(&from)?, index_of(&to)?, name)))
        .collect();
    edges.sort_by(|a, b| {
        let ka = (&graph.components[a.0].scope, &graph.components[a.1].scope, &a.2);
        let kb = (&graph.components[b.0].scope, &graph.components[b.1].scope, &b.2);
        ka.cmp(&kb)
    });
    for (from, to, name) in edges {
        out.push_str(&format!("  c{} -> c{} [label=\"{}\"];\n", from, to, sanitize(&name)));
    }
    out.push_str("}\n");
    out
}
