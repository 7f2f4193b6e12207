//! Topology synthesis: retrieval, edge proposal, and constraint repair.
//!
//! The pipeline turns a selected unit set V into a compatible directed
//! graph: retrieve each unit's I/O schema and the best-overlapping
//! motifs, ask a proposer for an edge set (a deterministic heuristic, a
//! mock table, or a remote generator), then run the repair loop until
//! every edge satisfies the compatibility constraint. The repair loop is
//! the safety net: whatever the proposer emits, the output graph
//! satisfies the constraint.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapter::{AdapterError, GenerationRequest, Generator};
use crate::graph::{check_phi, unit_io_validity, GraphEdge, GraphNode, ProcessGraph};
use crate::kb::{
    canonicalize_unit_name, normalize_name, CriticalPathRule, IoRuleKind, KnowledgeBase, Motif,
    UnitSpec,
};
use crate::metrics::UnitSelection;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("unit {0:?} is not in the knowledge base")]
    UnresolvedUnit(String),
    #[error("edge proposal failed: {source}")]
    Proposer {
        #[source]
        source: AdapterError,
        /// Trace accumulated before the failure (context retrieval and
        /// proposal parsing; repair never ran).
        trace: RepairTrace,
    },
}

/// Which proposer backs `synthesize`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposerKind {
    Heuristic,
    Mock,
    Remote,
}

/// What context text is forwarded to the proposer: nothing, the stage-1
/// reasoning, the key-topology edges from retrieved motifs, or both.
/// Unit I/O schemas are always forwarded — they are the hard constraints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RationaleMode {
    None,
    Reasoning,
    KeyTopology,
    All,
}

impl RationaleMode {
    fn includes_reasoning(self) -> bool {
        matches!(self, RationaleMode::Reasoning | RationaleMode::All)
    }

    fn includes_topology(self) -> bool {
        matches!(self, RationaleMode::KeyTopology | RationaleMode::All)
    }
}

/// Synthesis configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub context_n: usize,
    pub max_repair_iters: usize,
    pub seed: u64,
    pub proposer: ProposerKind,
    pub rationale_mode: RationaleMode,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            context_n: 3,
            max_repair_iters: 10,
            seed: 0,
            proposer: ProposerKind::Heuristic,
            rationale_mode: RationaleMode::None,
        }
    }
}

/// Retrieved context for one synthesis call: I/O schemas for every unit
/// of V, the top-n motifs by unit overlap, and per-edge exemplar lines
/// drawn from those motifs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextBundle {
    pub unit_schemas: Vec<UnitSpec>,
    pub motifs: Vec<Motif>,
    pub exemplars: Vec<String>,
    pub n: usize,
}

/// One repair pass that changed the graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepairIteration {
    pub violations_before: usize,
    pub edges_removed: Vec<GraphEdge>,
    pub edges_added: Vec<GraphEdge>,
}

/// Record of a repair run. `converged` means no pending repairs remain:
/// the constraint holds, every applicable critical-path rule is
/// realized, and every requires-input rule is fed.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RepairTrace {
    pub iterations: Vec<RepairIteration>,
    pub converged: bool,
    /// Proposal lines dropped before repair (unparseable, unknown units
    /// or materials, self-loops, duplicates).
    pub dropped_proposals: usize,
}

fn edge_exemplar(edge: &GraphEdge) -> String {
    match &edge.material {
        Some(m) => format!("{} -> {} [{}]", edge.from, edge.to, m),
        None => format!("{} -> {}", edge.from, edge.to),
    }
}

/// Retrieve I/O schemas for every unit of `v` and the top-`n` motifs
/// ranked by overlap |motif ∩ v| / |motif|, ties broken by motif id.
pub fn retrieve_context(
    v: &UnitSelection,
    kb: &KnowledgeBase,
    n: usize,
) -> Result<ContextBundle, SynthError> {
    let mut unit_schemas = Vec::new();
    for id in v.iter() {
        let spec = kb
            .unit(id)
            .ok_or_else(|| SynthError::UnresolvedUnit(id.clone()))?;
        unit_schemas.push(spec.clone());
    }

    let mut ranked: Vec<(&Motif, f64)> = kb
        .motifs
        .iter()
        .map(|m| {
            let overlap = m.unit_ids.iter().filter(|u| v.contains(u)).count();
            let score = if m.unit_ids.is_empty() {
                0.0
            } else {
                overlap as f64 / m.unit_ids.len() as f64
            };
            (m, score)
        })
        .collect();
    ranked.sort_by(|(ma, sa), (mb, sb)| {
        sb.partial_cmp(sa)
            .expect("overlap scores are finite")
            .then_with(|| ma.id.cmp(&mb.id))
    });
    let motifs: Vec<Motif> = ranked.into_iter().take(n).map(|(m, _)| m.clone()).collect();

    let mut exemplars = Vec::new();
    let mut seen = BTreeSet::new();
    for motif in &motifs {
        for edge in &motif.edges {
            let line = edge_exemplar(&GraphEdge::new(
                edge.from.clone(),
                edge.to.clone(),
                edge.material.clone(),
            ));
            if seen.insert(line.clone()) {
                exemplars.push(line);
            }
        }
    }

    Ok(ContextBundle {
        unit_schemas,
        n: motifs.len(),
        motifs,
        exemplars,
    })
}

/// Deterministic baseline proposer: for every ordered unit pair (a, b)
/// of V with a nonempty shared material set, propose a -> b labeled with
/// the lexicographically smallest shared material. Every proposed edge
/// satisfies the compatibility constraint by construction. The seed is
/// accepted for interface parity; the construction needs no randomness.
pub fn heuristic_proposer(
    v: &UnitSelection,
    kb: &KnowledgeBase,
    _seed: u64,
) -> Result<Vec<GraphEdge>, SynthError> {
    let mut specs = Vec::new();
    for id in v.iter() {
        specs.push(
            kb.unit(id)
                .ok_or_else(|| SynthError::UnresolvedUnit(id.clone()))?,
        );
    }
    let mut edges = Vec::new();
    for from in &specs {
        for to in &specs {
            if from.id == to.id {
                continue;
            }
            if let Some(material) = kb.shared_materials(from, to).into_iter().next() {
                edges.push(GraphEdge::new(from.id.clone(), to.id.clone(), Some(material)));
            }
        }
    }
    Ok(edges)
}

fn resolve_material_name(raw: &str, kb: &KnowledgeBase) -> Option<String> {
    let token = normalize_name(raw);
    kb.materials
        .iter()
        .find(|m| m.id == token || m.aliases.iter().any(|a| normalize_name(a) == token))
        .map(|m| m.id.clone())
}

/// Parse proposer output (one `source -> target [material]` line per
/// edge) against V. Lines that fail to parse, reference units outside V
/// or unknown materials, self-loop, or duplicate an accepted edge are
/// dropped and counted.
pub fn parse_proposals(
    text: &str,
    v: &UnitSelection,
    kb: &KnowledgeBase,
) -> (Vec<GraphEdge>, usize) {
    let mut edges = Vec::new();
    let mut seen: BTreeSet<(String, String, Option<String>)> = BTreeSet::new();
    let mut dropped = 0usize;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let Some(parsed) = parse_edge_line(line, v, kb) else {
            dropped += 1;
            continue;
        };
        let key = (parsed.from.clone(), parsed.to.clone(), parsed.material.clone());
        if parsed.from == parsed.to || !seen.insert(key) {
            dropped += 1;
            continue;
        }
        edges.push(parsed);
    }
    (edges, dropped)
}

fn parse_edge_line(line: &str, v: &UnitSelection, kb: &KnowledgeBase) -> Option<GraphEdge> {
    let (lhs, rhs) = line.split_once("->")?;
    let (target_raw, material_raw) = match rhs.split_once('[') {
        Some((target, rest)) => (target, Some(rest.trim_end().strip_suffix(']')?)),
        None => (rhs, None),
    };
    let from = canonicalize_unit_name(lhs, kb).ok()?;
    let to = canonicalize_unit_name(target_raw, kb).ok()?;
    if !v.contains(&from) || !v.contains(&to) {
        return None;
    }
    let material = match material_raw {
        Some(raw) => Some(resolve_material_name(raw, kb)?),
        None => None,
    };
    Some(GraphEdge::new(from, to, material))
}

/// One missing repair: an unrealized critical path or an unfed
/// requires-input rule.
enum Need {
    CriticalPath(usize),
    RequiresInput { node: String, material: String },
}

fn critical_rule_satisfied(
    g: &ProcessGraph,
    rule: &CriticalPathRule,
    kb: &KnowledgeBase,
) -> bool {
    let sources: BTreeSet<String> = if kb.unit(&rule.source_predicate).is_some() {
        g.nodes()
            .iter()
            .filter(|n| n.unit == rule.source_predicate)
            .map(|n| n.id.clone())
            .collect()
    } else {
        g.nodes()
            .iter()
            .filter(|n| {
                kb.unit(&n.unit)
                    .is_some_and(|u| u.outputs.contains(&rule.source_predicate))
            })
            .map(|n| n.id.clone())
            .collect()
    };
    let targets: BTreeSet<String> = g
        .nodes()
        .iter()
        .filter(|n| n.unit == rule.target_unit)
        .map(|n| n.id.clone())
        .collect();
    !sources.is_empty()
        && !targets.is_empty()
        && crate::graph::reachable(g, &sources, &targets).unwrap_or(false)
}

fn pending_needs(
    g: &ProcessGraph,
    kb: &KnowledgeBase,
    rules: &[CriticalPathRule],
) -> Vec<Need> {
    let mut needs = Vec::new();
    for (index, rule) in rules.iter().enumerate() {
        if !critical_rule_satisfied(g, rule, kb) {
            needs.push(Need::CriticalPath(index));
        }
    }
    if let Ok(validity) = unit_io_validity(g, kb) {
        for node in g.nodes() {
            if validity[&node.id] {
                continue;
            }
            let Some(spec) = kb.unit(&node.unit) else { continue };
            for material in spec.rule_materials(IoRuleKind::RequiresInput) {
                let fed = g.edges().iter().any(|e| {
                    e.to == node.id
                        && match &e.material {
                            Some(m) => m == material,
                            None => kb
                                .unit(&g.node(&e.from).expect("endpoint exists").unit)
                                .is_some_and(|u| u.outputs.contains(material)),
                        }
                });
                if !fed {
                    needs.push(Need::RequiresInput {
                        node: node.id.clone(),
                        material: material.to_string(),
                    });
                }
            }
        }
    }
    needs
}

/// A forbids-input rule on the target blocks an addition that would
/// deliver the forbidden material.
fn violates_forbids(target: &UnitSpec, material: &str) -> bool {
    target
        .rule_materials(IoRuleKind::ForbidsInput)
        .any(|m| m == material)
}

/// Smallest compatible edge realizing a missing critical path: candidates
/// ordered by (source node, material, target node).
fn critical_path_candidate(
    g: &ProcessGraph,
    rule: &CriticalPathRule,
    kb: &KnowledgeBase,
    present: &BTreeSet<(String, String, Option<String>)>,
) -> Option<GraphEdge> {
    let source_nodes: Vec<&GraphNode> = if kb.unit(&rule.source_predicate).is_some() {
        g.nodes().iter().filter(|n| n.unit == rule.source_predicate).collect()
    } else {
        g.nodes()
            .iter()
            .filter(|n| {
                kb.unit(&n.unit)
                    .is_some_and(|u| u.outputs.contains(&rule.source_predicate))
            })
            .collect()
    };
    let target_nodes: Vec<&GraphNode> = g
        .nodes()
        .iter()
        .filter(|n| n.unit == rule.target_unit)
        .collect();
    let mut best: Option<(String, String, String)> = None; // (from, material, to)
    for s in &source_nodes {
        let from_spec = kb.unit(&s.unit)?;
        for t in &target_nodes {
            if s.id == t.id {
                continue;
            }
            let to_spec = kb.unit(&t.unit)?;
            for material in kb.shared_materials(from_spec, to_spec) {
                if violates_forbids(to_spec, &material) {
                    continue;
                }
                if present.contains(&(s.id.clone(), t.id.clone(), Some(material.clone()))) {
                    continue;
                }
                let key = (s.id.clone(), material.clone(), t.id.clone());
                if best.as_ref().is_none_or(|b| key < *b) {
                    best = Some(key);
                }
            }
        }
    }
    best.map(|(from, material, to)| GraphEdge::new(from, to, Some(material)))
}

/// Smallest compatible edge feeding a starved requires-input rule:
/// candidates ordered by source node id (the material is fixed).
fn requires_input_candidate(
    g: &ProcessGraph,
    node_id: &str,
    material: &str,
    kb: &KnowledgeBase,
    present: &BTreeSet<(String, String, Option<String>)>,
) -> Option<GraphEdge> {
    let target = g.node(node_id)?;
    let target_spec = kb.unit(&target.unit)?;
    if !target_spec.inputs.contains(material) || violates_forbids(target_spec, material) {
        return None;
    }
    g.nodes()
        .iter()
        .filter(|s| s.id != node_id)
        .filter(|s| kb.unit(&s.unit).is_some_and(|u| u.outputs.contains(material)))
        .map(|s| s.id.clone())
        .find(|from| !present.contains(&(from.clone(), node_id.to_string(), Some(material.to_string()))))
        .map(|from| GraphEdge::new(from, node_id, Some(material.to_string())))
}

/// Iteratively repair a graph until the compatibility constraint holds
/// and no rule-driven addition is possible.
///
/// Each pass removes every constraint-violating edge, then adds one
/// compatible edge (smallest by source node then material) for each
/// still-unsatisfied critical-path rule and each unfed requires-input
/// rule. Additions are compatible at insertion, so the output always
/// satisfies the constraint; non-convergence (an unsatisfiable rule) is
/// reported in the trace, never thrown.
pub fn repair_loop(
    g: &ProcessGraph,
    kb: &KnowledgeBase,
    rules: &[CriticalPathRule],
    max_iters: usize,
) -> (ProcessGraph, RepairTrace) {
    let mut current = g.clone();
    let mut trace = RepairTrace::default();
    for _ in 0..max_iters {
        let phi = match check_phi(&current, kb) {
            Ok(report) => report,
            Err(_) => break, // unknown units: leave the graph unrepairable
        };
        let needs = pending_needs(&current, kb, rules);
        let violations_before = phi.violations.len() + needs.len();
        if violations_before == 0 {
            break;
        }

        let bad: BTreeSet<(String, String, Option<String>)> = phi
            .violations
            .iter()
            .map(|v| (v.from.clone(), v.to.clone(), v.material.clone()))
            .collect();
        let (kept, removed): (Vec<GraphEdge>, Vec<GraphEdge>) =
            current.edges().iter().cloned().partition(|e| {
                !bad.contains(&(e.from.clone(), e.to.clone(), e.material.clone()))
            });
        let stripped = ProcessGraph::new(current.nodes().to_vec(), kept)
            .expect("removing edges preserves structural invariants");

        let mut present: BTreeSet<(String, String, Option<String>)> = stripped
            .edges()
            .iter()
            .map(|e| (e.from.clone(), e.to.clone(), e.material.clone()))
            .collect();
        let mut added = Vec::new();
        for need in pending_needs(&stripped, kb, rules) {
            let candidate = match &need {
                Need::CriticalPath(index) => {
                    critical_path_candidate(&stripped, &rules[*index], kb, &present)
                }
                Need::RequiresInput { node, material } => {
                    requires_input_candidate(&stripped, node, material, kb, &present)
                }
            };
            if let Some(edge) = candidate {
                present.insert((edge.from.clone(), edge.to.clone(), edge.material.clone()));
                added.push(edge);
            }
        }

        if removed.is_empty() && added.is_empty() {
            break;
        }
        let mut edges = stripped.edges().to_vec();
        edges.extend(added.iter().cloned());
        current = ProcessGraph::new(stripped.nodes().to_vec(), edges)
            .expect("additions are deduplicated and endpoint-checked");
        trace.iterations.push(RepairIteration {
            violations_before,
            edges_removed: removed,
            edges_added: added,
        });
    }

    let clean = check_phi(&current, kb).map(|r| r.satisfied).unwrap_or(false);
    trace.converged = clean && pending_needs(&current, kb, rules).is_empty();
    (current, trace)
}

/// Proposer handle for [`synthesize`].
pub enum Proposer<'a> {
    /// The deterministic compatible-pairs baseline.
    Heuristic,
    /// Any generator (mock table or remote endpoint); its text output is
    /// parsed as edge lines.
    External(&'a dyn Generator),
}

/// Versioned prompt template for external proposers. The retrieved I/O
/// schemas are injected as hard constraints; motif edges and stage-1
/// reasoning are forwarded according to the rationale mode.
pub fn build_topology_prompt(
    v: &UnitSelection,
    ctx: &ContextBundle,
    mode: RationaleMode,
    rationale: Option<&str>,
) -> String {
    let mut prompt = String::from("[topology-prompt v1]\n");
    prompt.push_str("Connect the selected process units into a directed material-flow diagram.\n");
    prompt.push_str(&format!(
        "units: {}\n",
        v.iter().cloned().collect::<Vec<_>>().join(", ")
    ));
    prompt.push_str(
        "Hard constraints — every edge must carry a material its source emits and its target accepts:\n",
    );
    for schema in &ctx.unit_schemas {
        prompt.push_str(&format!(
            "- {} inputs [{}] outputs [{}]\n",
            schema.id,
            schema.inputs.iter().cloned().collect::<Vec<_>>().join(", "),
            schema.outputs.iter().cloned().collect::<Vec<_>>().join(", "),
        ));
    }
    if mode.includes_reasoning() {
        if let Some(text) = rationale {
            prompt.push_str("Engineering rationale:\n");
            prompt.push_str(text);
            prompt.push('\n');
        }
    }
    if mode.includes_topology() && !ctx.exemplars.is_empty() {
        prompt.push_str("Known-good connections from proven motifs:\n");
        for line in &ctx.exemplars {
            prompt.push_str(line);
            prompt.push('\n');
        }
    }
    prompt.push_str("Respond with one edge per line: source -> target [material]\n");
    prompt
}

/// Full synthesis pipeline: retrieve context, propose edges, parse, and
/// repair. The output always satisfies the compatibility constraint,
/// whatever the proposer emitted. Critical-path rules whose target unit
/// is outside V are out of reach for edge repair and are not applied.
pub fn synthesize(
    v: &UnitSelection,
    kb: &KnowledgeBase,
    cfg: &SynthConfig,
    proposer: &Proposer<'_>,
    rationale: Option<&str>,
) -> Result<(ProcessGraph, RepairTrace), SynthError> {
    let ctx = retrieve_context(v, kb, cfg.context_n)?;
    let (edges, dropped) = match proposer {
        Proposer::Heuristic => (heuristic_proposer(v, kb, cfg.seed)?, 0),
        Proposer::External(generator) => {
            let prompt = build_topology_prompt(v, &ctx, cfg.rationale_mode, rationale);
            let req = GenerationRequest::for_prompt(prompt).tagged("stage", "stage2");
            let text = generator.generate(&req).map_err(|source| SynthError::Proposer {
                source,
                trace: RepairTrace::default(),
            })?;
            parse_proposals(&text, v, kb)
        }
    };

    let nodes: Vec<GraphNode> = v
        .iter()
        .map(|id| GraphNode {
            id: id.clone(),
            unit: id.clone(),
        })
        .collect();
    let graph = ProcessGraph::new(nodes, edges).expect("proposals are validated before assembly");

    let rules: Vec<CriticalPathRule> = kb
        .critical_paths
        .iter()
        .filter(|r| v.contains(&r.target_unit))
        .cloned()
        .collect();
    let (repaired, mut trace) = repair_loop(&graph, kb, &rules, cfg.max_repair_iters);
    trace.dropped_proposals = dropped;
    Ok((repaired, trace))
}
