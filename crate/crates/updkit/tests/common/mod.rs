//! Shared test helpers: seeded random knowledge bases and graphs, plus
//! independent brute-force oracles that deliberately avoid the library's
//! own set machinery.

#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::PathBuf;

use updkit::graph::{GraphEdge, GraphNode, ProcessGraph};
use updkit::kb::{KnowledgeBase, Material, UnitSpec};
use updkit::rng::SplitMix64;

pub fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn load_fixture_kb(name: &str) -> KnowledgeBase {
    let path = fixtures_dir().join(name);
    updkit::kb::load_knowledge_base(&path).expect("fixture KB loads")
}

/// Random KB: materials m0..m{k-1}, units u0..u{n-1} with random I/O
/// sets (outputs always nonempty). No motifs or rules.
pub fn random_kb(rng: &mut SplitMix64, n_materials: usize, n_units: usize) -> KnowledgeBase {
    let materials: Vec<Material> = (0..n_materials)
        .map(|i| Material {
            id: format!("m{i}"),
            aliases: BTreeSet::new(),
            properties: Default::default(),
        })
        .collect();
    let units: Vec<UnitSpec> = (0..n_units)
        .map(|i| {
            let pick = |rng: &mut SplitMix64, at_least_one: bool| -> BTreeSet<String> {
                let mut set = BTreeSet::new();
                for m in 0..n_materials {
                    if rng.next_f64() < 0.35 {
                        set.insert(format!("m{m}"));
                    }
                }
                if at_least_one && set.is_empty() {
                    set.insert(format!("m{}", rng.next_below(n_materials as u64)));
                }
                set
            };
            UnitSpec {
                id: format!("u{i}"),
                display_name: String::new(),
                aliases: BTreeSet::new(),
                inputs: pick(rng, false),
                outputs: pick(rng, true),
                io_rules: Vec::new(),
            }
        })
        .collect();
    KnowledgeBase {
        materials,
        units,
        motifs: Vec::new(),
        critical_paths: Vec::new(),
        archetypes: ["fuel", "petrochemical", "aromatics"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
    }
}

/// Random graph over the KB's units: arbitrary edges, roughly half
/// labeled with an arbitrary material. Not constraint-valid by design.
pub fn random_graph(rng: &mut SplitMix64, kb: &KnowledgeBase, max_nodes: usize) -> ProcessGraph {
    let n_nodes = 1 + rng.next_below(max_nodes as u64) as usize;
    let nodes: Vec<GraphNode> = (0..n_nodes)
        .map(|i| GraphNode {
            id: format!("n{i}"),
            unit: kb.units[rng.next_below(kb.units.len() as u64) as usize].id.clone(),
        })
        .collect();
    let mut edges = Vec::new();
    let mut seen = BTreeSet::new();
    let attempts = rng.next_below((3 * max_nodes) as u64 + 1);
    for _ in 0..attempts {
        let a = rng.next_below(n_nodes as u64) as usize;
        let b = rng.next_below(n_nodes as u64) as usize;
        if a == b {
            continue;
        }
        let material = if rng.next_f64() < 0.5 {
            Some(kb.materials[rng.next_below(kb.materials.len() as u64) as usize].id.clone())
        } else {
            None
        };
        let key = (a, b, material.clone());
        if seen.insert(key) {
            edges.push(GraphEdge::new(format!("n{a}"), format!("n{b}"), material));
        }
    }
    ProcessGraph::new(nodes, edges).expect("random graph respects structural invariants")
}

/// Random graph built from the compatible-edge pool only, so the
/// compatibility constraint holds by construction.
pub fn random_phi_graph(rng: &mut SplitMix64, kb: &KnowledgeBase, max_nodes: usize) -> ProcessGraph {
    let n_nodes = 2 + rng.next_below((max_nodes - 1) as u64) as usize;
    let nodes: Vec<GraphNode> = (0..n_nodes)
        .map(|i| GraphNode {
            id: format!("n{i}"),
            unit: kb.units[rng.next_below(kb.units.len() as u64) as usize].id.clone(),
        })
        .collect();
    let mut edges = Vec::new();
    let mut seen = BTreeSet::new();
    for a in 0..n_nodes {
        for b in 0..n_nodes {
            if a == b || rng.next_f64() < 0.4 {
                continue;
            }
            let from = kb.unit(&nodes[a].unit).unwrap();
            let to = kb.unit(&nodes[b].unit).unwrap();
            let shared: Vec<String> = kb.shared_materials(from, to).into_iter().collect();
            if shared.is_empty() {
                continue;
            }
            let material = if rng.next_f64() < 0.5 {
                None
            } else {
                Some(shared[rng.next_below(shared.len() as u64) as usize].clone())
            };
            if seen.insert((a, b, material.clone())) {
                edges.push(GraphEdge::new(format!("n{a}"), format!("n{b}"), material));
            }
        }
    }
    ProcessGraph::new(nodes, edges).expect("compatible graph respects structural invariants")
}

/// Consistently rename node ids (n3 → r3 style with a shuffled index),
/// preserving structure. Renamed graphs are isomorphic to the original
/// with edit distance zero.
pub fn rename_nodes(rng: &mut SplitMix64, g: &ProcessGraph) -> ProcessGraph {
    let mut order: Vec<usize> = (0..g.nodes().len()).collect();
    rng.shuffle(&mut order);
    let rename: std::collections::BTreeMap<&str, String> = g
        .nodes()
        .iter()
        .zip(order.iter())
        .map(|(n, i)| (n.id.as_str(), format!("r{i}")))
        .collect();
    let nodes: Vec<GraphNode> = g
        .nodes()
        .iter()
        .map(|n| GraphNode {
            id: rename[n.id.as_str()].clone(),
            unit: n.unit.clone(),
        })
        .collect();
    let edges: Vec<GraphEdge> = g
        .edges()
        .iter()
        .map(|e| {
            GraphEdge::new(
                rename[e.from.as_str()].clone(),
                rename[e.to.as_str()].clone(),
                e.material.clone(),
            )
        })
        .collect();
    ProcessGraph::new(nodes, edges).expect("renaming preserves structural invariants")
}

/// Perturb a graph: drop some edges, retarget others, swap a node's
/// unit. Used to build "nearby" pairs for edit-distance testing.
pub fn mutate_graph(rng: &mut SplitMix64, kb: &KnowledgeBase, g: &ProcessGraph) -> ProcessGraph {
    let mut nodes: Vec<GraphNode> = g.nodes().to_vec();
    if !nodes.is_empty() && rng.next_f64() < 0.5 {
        let i = rng.next_below(nodes.len() as u64) as usize;
        nodes[i].unit = kb.units[rng.next_below(kb.units.len() as u64) as usize].id.clone();
    }
    let mut edges: Vec<GraphEdge> = g
        .edges()
        .iter()
        .filter(|_| rng.next_f64() < 0.8)
        .cloned()
        .collect();
    let mut seen: BTreeSet<(String, String, Option<String>)> = edges
        .iter()
        .map(|e| (e.from.clone(), e.to.clone(), e.material.clone()))
        .collect();
    for _ in 0..rng.next_below(3) {
        if nodes.len() < 2 {
            break;
        }
        let a = rng.next_below(nodes.len() as u64) as usize;
        let b = rng.next_below(nodes.len() as u64) as usize;
        if a == b {
            continue;
        }
        let material = if rng.next_f64() < 0.5 {
            Some(kb.materials[rng.next_below(kb.materials.len() as u64) as usize].id.clone())
        } else {
            None
        };
        let key = (nodes[a].id.clone(), nodes[b].id.clone(), material.clone());
        if seen.insert(key) {
            edges.push(GraphEdge::new(nodes[a].id.clone(), nodes[b].id.clone(), material));
        }
    }
    ProcessGraph::new(nodes, edges).expect("mutation respects structural invariants")
}

/// Independent per-edge compatibility oracle: literal loops, no set
/// types, no code shared with the library's check.
pub fn brute_force_phi(g: &ProcessGraph, kb: &KnowledgeBase) -> bool {
    for edge in g.edges() {
        let from_unit = g.nodes().iter().find(|n| n.id == edge.from).expect("endpoint").unit.clone();
        let to_unit = g.nodes().iter().find(|n| n.id == edge.to).expect("endpoint").unit.clone();
        let mut from_outputs: Vec<&str> = Vec::new();
        let mut to_inputs: Vec<&str> = Vec::new();
        for unit in &kb.units {
            if unit.id == from_unit {
                for m in &unit.outputs {
                    from_outputs.push(m);
                }
            }
            if unit.id == to_unit {
                for m in &unit.inputs {
                    to_inputs.push(m);
                }
            }
        }
        let ok = match &edge.material {
            Some(label) => {
                let mut in_out = false;
                let mut in_in = false;
                for m in &from_outputs {
                    if *m == label {
                        in_out = true;
                    }
                }
                for m in &to_inputs {
                    if *m == label {
                        in_in = true;
                    }
                }
                in_out && in_in
            }
            None => {
                let mut any = false;
                for a in &from_outputs {
                    for b in &to_inputs {
                        if a == b {
                            any = true;
                        }
                    }
                }
                any
            }
        };
        if !ok {
            return false;
        }
    }
    true
}

/// Exhaustive reachability oracle: enumerate every simple path by DFS.
/// Only sensible for small graphs.
pub fn brute_force_reachable(g: &ProcessGraph, sources: &BTreeSet<String>, targets: &BTreeSet<String>) -> bool {
    for s in sources {
        if targets.contains(s) {
            return true;
        }
    }
    fn dfs(
        g: &ProcessGraph,
        current: &str,
        targets: &BTreeSet<String>,
        visited: &mut Vec<String>,
    ) -> bool {
        for e in g.edges() {
            if e.from == current {
                if targets.contains(&e.to) {
                    return true;
                }
                if !visited.iter().any(|v| v == &e.to) {
                    visited.push(e.to.clone());
                    if dfs(g, &e.to, targets, visited) {
                        return true;
                    }
                    visited.pop();
                }
            }
        }
        false
    }
    for s in sources {
        let mut visited = vec![s.clone()];
        if dfs(g, s, targets, &mut visited) {
            return true;
        }
    }
    false
}
