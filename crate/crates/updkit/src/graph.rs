//! Directed process graphs and the hard compatibility constraint.
//!
//! The constraint on a graph G = (V, E): for every edge (u, v), the
//! output material set of u's unit must intersect the input material set
//! of v's unit. A labeled edge must additionally carry a material from
//! that intersection. [`check_phi`] evaluates it per edge and reports
//! every violation.
//!
//! Graphs are immutable after construction and canonically ordered
//! (nodes by id, edges lexicographically), so structural equality is
//! plain equality and serialization is deterministic.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kb::{KnowledgeBase, UnitSpec, FORMAT_VERSION};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("graph parse error: {0}")]
    Parse(String),
    #[error("unsupported format_version {found:?} (expected {FORMAT_VERSION:?})")]
    UnsupportedVersion { found: String },
    #[error("duplicate node id {0:?}")]
    DuplicateNode(String),
    #[error("edge {from:?} -> {to:?} references undeclared node {missing:?}")]
    UndeclaredNode {
        from: String,
        to: String,
        missing: String,
    },
    #[error("self-loop edge on node {0:?} is not allowed")]
    SelfLoop(String),
    #[error("duplicate edge {from:?} -> {to:?} ({})", material_label(.material))]
    DuplicateEdge {
        from: String,
        to: String,
        material: Option<String>,
    },
    #[error("node {node:?} references unknown unit {unit:?}")]
    UnknownUnit { node: String, unit: String },
    #[error("edge {from:?} -> {to:?} references unknown material {material:?}")]
    UnknownMaterial {
        from: String,
        to: String,
        material: String,
    },
    #[error("unknown node id {0:?}")]
    UnknownNode(String),
}

fn material_label(material: &Option<String>) -> String {
    match material {
        Some(m) => format!("material {m:?}"),
        None => "unlabeled".to_string(),
    }
}

/// A unit instance in a process graph.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GraphNode {
    pub id: String,
    pub unit: String,
}

/// A directed material flow. `material = None` is an unlabeled stream;
/// legacy diagrams often omit stream labels.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GraphEdge {
    pub from: String,
    pub to: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub material: Option<String>,
}

impl GraphEdge {
    pub fn new(from: impl Into<String>, to: impl Into<String>, material: Option<String>) -> Self {
        Self {
            from: from.into(),
            to: to.into(),
            material,
        }
    }
}

/// Directed graph of unit instances and material flows, canonically
/// ordered at construction.
///
/// Structural invariants, enforced by [`ProcessGraph::new`]: unique node
/// ids, edge endpoints declared, no self-loops, and parallel edges only
/// with distinct material labels (duplicate unlabeled edges rejected).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ProcessGraph {
    nodes: Vec<GraphNode>,
    edges: Vec<GraphEdge>,
}

impl ProcessGraph {
    pub fn new(mut nodes: Vec<GraphNode>, mut edges: Vec<GraphEdge>) -> Result<Self, GraphError> {
        nodes.sort();
        let mut ids: BTreeSet<&str> = BTreeSet::new();
        for n in &nodes {
            if !ids.insert(n.id.as_str()) {
                return Err(GraphError::DuplicateNode(n.id.clone()));
            }
        }
        edges.sort();
        let mut seen: BTreeSet<(&str, &str, Option<&str>)> = BTreeSet::new();
        for e in &edges {
            if e.from == e.to {
                return Err(GraphError::SelfLoop(e.from.clone()));
            }
            for endpoint in [&e.from, &e.to] {
                if !ids.contains(endpoint.as_str()) {
                    return Err(GraphError::UndeclaredNode {
                        from: e.from.clone(),
                        to: e.to.clone(),
                        missing: endpoint.clone(),
                    });
                }
            }
            if !seen.insert((e.from.as_str(), e.to.as_str(), e.material.as_deref())) {
                return Err(GraphError::DuplicateEdge {
                    from: e.from.clone(),
                    to: e.to.clone(),
                    material: e.material.clone(),
                });
            }
        }
        Ok(Self { nodes, edges })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn nodes(&self) -> &[GraphNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[GraphEdge] {
        &self.edges
    }

    pub fn node(&self, id: &str) -> Option<&GraphNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn has_node(&self, id: &str) -> bool {
        self.node(id).is_some()
    }

    /// node id → unit spec, failing on the first node whose unit is
    /// missing from the KB.
    pub fn resolve_units<'kb>(
        &self,
        kb: &'kb KnowledgeBase,
    ) -> Result<BTreeMap<&str, &'kb UnitSpec>, GraphError> {
        let mut map = BTreeMap::new();
        for n in &self.nodes {
            let spec = kb.unit(&n.unit).ok_or_else(|| GraphError::UnknownUnit {
                node: n.id.clone(),
                unit: n.unit.clone(),
            })?;
            map.insert(n.id.as_str(), spec);
        }
        Ok(map)
    }

    /// Node ids with no incident edges.
    pub fn isolated_nodes(&self) -> Vec<&str> {
        let mut touched: BTreeSet<&str> = BTreeSet::new();
        for e in &self.edges {
            touched.insert(&e.from);
            touched.insert(&e.to);
        }
        self.nodes
            .iter()
            .map(|n| n.id.as_str())
            .filter(|id| !touched.contains(id))
            .collect()
    }
}

/// One incompatible edge and the reason it fails.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhiViolation {
    pub from: String,
    pub to: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub material: Option<String>,
    pub reason: String,
}

/// Result of evaluating the hard compatibility constraint on a graph.
/// `satisfied` holds exactly when `violations` is empty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhiReport {
    pub satisfied: bool,
    pub violations: Vec<PhiViolation>,
    pub checked_edges: usize,
}

impl PhiReport {
    fn new(violations: Vec<PhiViolation>, checked_edges: usize) -> Self {
        Self {
            satisfied: violations.is_empty(),
            violations,
            checked_edges,
        }
    }
}

/// Evaluate the hard compatibility constraint on every edge.
///
/// An unlabeled edge (u, v) is compatible when Out(u) ∩ In(v) is
/// nonempty; a labeled edge additionally requires its material to lie in
/// that intersection. A graph with zero edges is vacuously satisfied.
pub fn check_phi(g: &ProcessGraph, kb: &KnowledgeBase) -> Result<PhiReport, GraphError> {
    let units = g.resolve_units(kb)?;
    let mut violations = Vec::new();
    for e in g.edges() {
        let from = units[e.from.as_str()];
        let to = units[e.to.as_str()];
        let shared = kb.shared_materials(from, to);
        match &e.material {
            None if shared.is_empty() => violations.push(PhiViolation {
                from: e.from.clone(),
                to: e.to.clone(),
                material: None,
                reason: format!("Out({}) ∩ In({}) is empty", from.id, to.id),
            }),
            Some(m) if !shared.contains(m) => violations.push(PhiViolation {
                from: e.from.clone(),
                to: e.to.clone(),
                material: Some(m.clone()),
                reason: format!("material {m:?} is not in Out({}) ∩ In({})", from.id, to.id),
            }),
            _ => {}
        }
    }
    Ok(PhiReport::new(violations, g.edges().len()))
}

/// Whether an edge can deliver `material` into its target: either it is
/// labeled with that material, or it is unlabeled and its source unit
/// emits it.
fn delivers(edge: &GraphEdge, material: &str, units: &BTreeMap<&str, &UnitSpec>) -> bool {
    match &edge.material {
        Some(m) => m == material,
        None => units[edge.from.as_str()].outputs.contains(material),
    }
}

/// Whether an edge can carry `material` out of its source: either it is
/// labeled with that material, or it is unlabeled and its target unit
/// accepts it.
fn carries(edge: &GraphEdge, material: &str, units: &BTreeMap<&str, &UnitSpec>) -> bool {
    match &edge.material {
        Some(m) => m == material,
        None => units[edge.to.as_str()].inputs.contains(material),
    }
}

/// Per-node I/O rule validity: a node is valid when every rule of its
/// unit holds against its incident edges. Nodes without rules are
/// vacuously valid.
pub fn unit_io_validity(
    g: &ProcessGraph,
    kb: &KnowledgeBase,
) -> Result<BTreeMap<String, bool>, GraphError> {
    let units = g.resolve_units(kb)?;
    let mut result = BTreeMap::new();
    for n in g.nodes() {
        let spec = units[n.id.as_str()];
        let incoming: Vec<&GraphEdge> = g.edges().iter().filter(|e| e.to == n.id).collect();
        let outgoing: Vec<&GraphEdge> = g.edges().iter().filter(|e| e.from == n.id).collect();
        let valid = spec.io_rules.iter().all(|rule| {
            let m = rule.material.as_str();
            match rule.kind {
                crate::kb::IoRuleKind::RequiresInput => {
                    incoming.iter().any(|e| delivers(e, m, &units))
                }
                crate::kb::IoRuleKind::RequiresOutput => {
                    outgoing.iter().any(|e| carries(e, m, &units))
                }
                crate::kb::IoRuleKind::ForbidsInput => {
                    !incoming.iter().any(|e| delivers(e, m, &units))
                }
            }
        });
        result.insert(n.id.clone(), valid);
    }
    Ok(result)
}

/// Directed reachability from any source to any target. A node that is
/// both source and target counts as a zero-length path.
pub fn reachable(
    g: &ProcessGraph,
    sources: &BTreeSet<String>,
    targets: &BTreeSet<String>,
) -> Result<bool, GraphError> {
    for id in sources.iter().chain(targets.iter()) {
        if !g.has_node(id) {
            return Err(GraphError::UnknownNode(id.clone()));
        }
    }
    if sources.iter().any(|s| targets.contains(s)) {
        return Ok(true);
    }
    let mut adjacency: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for e in g.edges() {
        adjacency.entry(&e.from).or_default().push(&e.to);
    }
    let mut visited: BTreeSet<&str> = sources.iter().map(|s| s.as_str()).collect();
    let mut queue: VecDeque<&str> = visited.iter().copied().collect();
    while let Some(current) = queue.pop_front() {
        for &next in adjacency.get(current).into_iter().flatten() {
            if targets.contains(next) {
                return Ok(true);
            }
            if visited.insert(next) {
                queue.push_back(next);
            }
        }
    }
    Ok(false)
}

#[derive(Serialize, Deserialize)]
struct GraphFile {
    format_version: String,
    nodes: Vec<GraphNode>,
    edges: Vec<GraphEdge>,
}

/// Parse a graph document and resolve it against a knowledge base.
///
/// Structural invariants are enforced, node unit ids must exist in the
/// KB, and edge material labels must name KB materials.
pub fn parse_graph(text: &str, kb: &KnowledgeBase) -> Result<ProcessGraph, GraphError> {
    let file: GraphFile =
        serde_json::from_str(text).map_err(|e| GraphError::Parse(e.to_string()))?;
    if file.format_version != FORMAT_VERSION {
        return Err(GraphError::UnsupportedVersion {
            found: file.format_version,
        });
    }
    let g = ProcessGraph::new(file.nodes, file.edges)?;
    g.resolve_units(kb)?;
    for e in g.edges() {
        if let Some(m) = &e.material {
            if !kb.has_material(m) {
                return Err(GraphError::UnknownMaterial {
                    from: e.from.clone(),
                    to: e.to.clone(),
                    material: m.clone(),
                });
            }
        }
    }
    Ok(g)
}

/// Serialize a graph to its canonical JSON document. The constructor's
/// canonical ordering makes the output deterministic; parsing it back
/// yields a structurally equal graph.
pub fn serialize_graph(g: &ProcessGraph) -> String {
    let file = GraphFile {
        format_version: FORMAT_VERSION.to_string(),
        nodes: g.nodes.clone(),
        edges: g.edges.clone(),
    };
    let mut out = serde_json::to_string_pretty(&file).expect("graph serialization cannot fail");
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::KnowledgeBase;

    fn ab_kb() -> KnowledgeBase {
        KnowledgeBase::from_json_str(
            r#"{
              "format_version": "1",
              "materials": [{"id": "crude"}, {"id": "naphtha"}, {"id": "gasoline"},
                            {"id": "hydrogen"}],
              "units": [
                {"id": "a", "inputs": ["crude"], "outputs": ["naphtha"]},
                {"id": "b", "inputs": ["naphtha"], "outputs": ["gasoline"]},
                {"id": "hydrogen_plant", "inputs": ["naphtha"], "outputs": ["hydrogen"]},
                {"id": "hydrotreater", "inputs": ["naphtha", "hydrogen"], "outputs": ["gasoline"],
                 "io_rules": [{"kind": "requires_input", "material": "hydrogen",
                               "description": "hydrogenation needs hydrogen feed"}]}
              ],
              "archetypes": ["fuel"]
            }"#,
        )
        .unwrap()
    }

    fn node(id: &str, unit: &str) -> GraphNode {
        GraphNode {
            id: id.into(),
            unit: unit.into(),
        }
    }

    #[test]
    fn phi_holds_on_a_compatible_edge() {
        let kb = ab_kb();
        let g = ProcessGraph::new(
            vec![node("a", "a"), node("b", "b")],
            vec![GraphEdge::new("a", "b", None)],
        )
        .unwrap();
        let report = check_phi(&g, &kb).unwrap();
        assert!(report.satisfied);
        assert_eq!(report.checked_edges, 1);
    }

    #[test]
    fn phi_fails_on_a_reversed_edge() {
        let kb = ab_kb();
        let g = ProcessGraph::new(
            vec![node("a", "a"), node("b", "b")],
            vec![GraphEdge::new("b", "a", None)],
        )
        .unwrap();
        let report = check_phi(&g, &kb).unwrap();
        assert!(!report.satisfied);
        assert_eq!(report.violations.len(), 1);
    }

    #[test]
    fn phi_is_vacuously_true_without_edges() {
        let kb = ab_kb();
        let g = ProcessGraph::new(vec![node("a", "a")], vec![]).unwrap();
        let report = check_phi(&g, &kb).unwrap();
        assert!(report.satisfied);
        assert_eq!(report.checked_edges, 0);
    }

    #[test]
    fn labeled_edge_must_carry_a_shared_material() {
        let kb = ab_kb();
        let g = ProcessGraph::new(
            vec![node("a", "a"), node("b", "b")],
            vec![GraphEdge::new("a", "b", Some("crude".into()))],
        )
        .unwrap();
        let report = check_phi(&g, &kb).unwrap();
        assert!(!report.satisfied);
        assert!(report.violations[0].reason.contains("crude"));
    }

    #[test]
    fn phi_errors_on_unknown_unit() {
        let kb = ab_kb();
        let g = ProcessGraph::new(vec![node("x", "mystery")], vec![]).unwrap();
        assert!(matches!(
            check_phi(&g, &kb),
            Err(GraphError::UnknownUnit { .. })
        ));
    }

    #[test]
    fn io_rules_require_a_delivering_edge() {
        let kb = ab_kb();
        let fed = ProcessGraph::new(
            vec![node("h2", "hydrogen_plant"), node("ht", "hydrotreater")],
            vec![GraphEdge::new("h2", "ht", Some("hydrogen".into()))],
        )
        .unwrap();
        let validity = unit_io_validity(&fed, &kb).unwrap();
        assert!(validity["ht"]);
        assert!(validity["h2"]); // no rules: vacuously valid

        let starved = ProcessGraph::new(
            vec![node("a", "a"), node("ht", "hydrotreater")],
            vec![GraphEdge::new("a", "ht", Some("naphtha".into()))],
        )
        .unwrap();
        let validity = unit_io_validity(&starved, &kb).unwrap();
        assert!(!validity["ht"]);
    }

    #[test]
    fn unlabeled_edges_deliver_what_their_source_emits() {
        let kb = ab_kb();
        let g = ProcessGraph::new(
            vec![node("h2", "hydrogen_plant"), node("ht", "hydrotreater")],
            vec![GraphEdge::new("h2", "ht", None)],
        )
        .unwrap();
        let validity = unit_io_validity(&g, &kb).unwrap();
        assert!(validity["ht"]);
    }

    #[test]
    fn reachability_follows_edge_direction() {
        let kb = ab_kb();
        let g = ProcessGraph::new(
            vec![node("a", "a"), node("b", "b"), node("c", "hydrogen_plant")],
            vec![GraphEdge::new("a", "b", None), GraphEdge::new("b", "c", None)],
        )
        .unwrap();
        let set = |ids: &[&str]| ids.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>();
        assert!(reachable(&g, &set(&["a"]), &set(&["c"])).unwrap());
        assert!(!reachable(&g, &set(&["c"]), &set(&["a"])).unwrap());
        assert!(reachable(&g, &set(&["a"]), &set(&["a"])).unwrap());
        assert!(matches!(
            reachable(&g, &set(&["nope"]), &set(&["a"])),
            Err(GraphError::UnknownNode(_))
        ));
        let _ = kb;
    }

    #[test]
    fn construction_rejects_self_loops_and_duplicates() {
        assert!(matches!(
            ProcessGraph::new(
                vec![node("a", "a")],
                vec![GraphEdge::new("a", "a", None)]
            ),
            Err(GraphError::SelfLoop(_))
        ));
        assert!(matches!(
            ProcessGraph::new(
                vec![node("a", "a"), node("b", "b")],
                vec![GraphEdge::new("a", "b", None), GraphEdge::new("a", "b", None)]
            ),
            Err(GraphError::DuplicateEdge { .. })
        ));
        // Parallel edges with distinct materials are allowed.
        assert!(ProcessGraph::new(
            vec![node("a", "a"), node("b", "b")],
            vec![
                GraphEdge::new("a", "b", Some("naphtha".into())),
                GraphEdge::new("a", "b", Some("crude".into()))
            ]
        )
        .is_ok());
    }

    #[test]
    fn parse_rejects_edges_to_undeclared_nodes() {
        let kb = ab_kb();
        let text = r#"{
          "format_version": "1",
          "nodes": [{"id": "a", "unit": "a"}],
          "edges": [{"from": "a", "to": "ghost"}]
        }"#;
        assert!(matches!(
            parse_graph(text, &kb),
            Err(GraphError::UndeclaredNode { .. })
        ));
    }

    #[test]
    fn serialize_then_parse_is_identity() {
        let kb = ab_kb();
        let g = ProcessGraph::new(
            vec![node("b", "b"), node("a", "a")],
            vec![
                GraphEdge::new("a", "b", Some("naphtha".into())),
                GraphEdge::new("a", "b", None),
            ],
        )
        .unwrap();
        let text = serialize_graph(&g);
        let back = parse_graph(&text, &kb).unwrap();
        assert_eq!(g, back);
    }
}
