//! Scoring functions for unit selection and diagram synthesis.
//!
//! Stage 1 scores: unit-selection F1 and chain-of-thought correctness.
//! Stage 2 scores: normalized graph edit distance (assignment-based
//! upper bound, with a small exact oracle for verification), critical
//! path coverage, and the unit I/O validity rate. All scores lie in
//! [0, 1].

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::lex_smallest_optimal;
use crate::graph::{reachable, unit_io_validity, GraphError, ProcessGraph};
use crate::kb::{canonicalize_unit_name, CriticalPathRule, KbError, KnowledgeBase};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("missing judgments for units: {}", .units.join(", "))]
    MissingJudgments { units: Vec<String> },
    #[error("graph has {nodes} nodes, above the exact-search limit of {limit}")]
    SizeLimit { nodes: usize, limit: usize },
    #[error("critical-path rule {rule:?}: {detail}")]
    UnresolvedRule { rule: String, detail: String },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// A set of canonical unit ids (the V of a selection task).
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UnitSelection {
    units: BTreeSet<String>,
}

impl UnitSelection {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Wrap ids that are already canonical (e.g. read from a validated
    /// fixture or produced by `resolve`).
    pub fn from_canonical<I, S>(units: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            units: units.into_iter().map(Into::into).collect(),
        }
    }

    /// Canonicalize raw names against the KB; any unresolved name is an
    /// error (no fuzzy matching).
    pub fn resolve<'a, I>(names: I, kb: &KnowledgeBase) -> Result<Self, KbError>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut units = BTreeSet::new();
        for name in names {
            units.insert(canonicalize_unit_name(name, kb)?);
        }
        Ok(Self { units })
    }

    pub fn units(&self) -> &BTreeSet<String> {
        &self.units
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.units.contains(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &String> {
        self.units.iter()
    }

    pub fn intersection(&self, other: &Self) -> BTreeSet<String> {
        self.units.intersection(&other.units).cloned().collect()
    }
}

/// Who judged a justification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Judge {
    Rule,
    Human,
    External,
}

/// Verdict on whether one unit's rationale is sound and non-hallucinated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JustificationJudgment {
    pub unit: String,
    pub valid: bool,
    pub judge: Judge,
    #[serde(default)]
    pub note: String,
}

/// Edit-cost model for graph edit distance. Substitution costs apply
/// only when the compared attributes differ; equal attributes always
/// substitute for free.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GedCosts {
    pub node_insert: f64,
    pub node_delete: f64,
    pub node_substitute: f64,
    pub edge_insert: f64,
    pub edge_delete: f64,
    pub edge_substitute: f64,
}

impl Default for GedCosts {
    fn default() -> Self {
        Self {
            node_insert: 1.0,
            node_delete: 1.0,
            node_substitute: 1.0,
            edge_insert: 1.0,
            edge_delete: 1.0,
            edge_substitute: 1.0,
        }
    }
}

impl GedCosts {
    fn node_sub(&self, a: &str, b: &str) -> f64 {
        if a == b {
            0.0
        } else {
            self.node_substitute
        }
    }

    /// Swap insert and delete roles; used to run the assignment step in
    /// the reverse orientation while staying a valid upper bound.
    fn reversed(&self) -> Self {
        Self {
            node_insert: self.node_delete,
            node_delete: self.node_insert,
            node_substitute: self.node_substitute,
            edge_insert: self.edge_delete,
            edge_delete: self.edge_insert,
            edge_substitute: self.edge_substitute,
        }
    }
}

/// Unit-selection F1: 2|pred ∩ gt| / (|pred| + |gt|).
///
/// Two empty selections agree vacuously and score 1.0.
pub fn unit_selection_f1(pred: &UnitSelection, gt: &UnitSelection) -> f64 {
    if pred.is_empty() && gt.is_empty() {
        return 1.0;
    }
    let overlap = pred.intersection(gt).len();
    2.0 * overlap as f64 / (pred.len() + gt.len()) as f64
}

/// Chain-of-thought correctness: the fraction of correctly selected
/// units (pred ∩ gt) whose justification was judged valid. An empty
/// intersection scores 0.0 — no correct selections means no demonstrated
/// reasoning quality.
///
/// Judgments must cover every unit of the intersection; extra judgments
/// are ignored and the first judgment per unit wins.
pub fn cot_correctness(
    judgments: &[JustificationJudgment],
    pred: &UnitSelection,
    gt: &UnitSelection,
) -> Result<f64, MetricsError> {
    let overlap = pred.intersection(gt);
    if overlap.is_empty() {
        return Ok(0.0);
    }
    let mut by_unit: BTreeMap<&str, bool> = BTreeMap::new();
    for j in judgments {
        by_unit.entry(j.unit.as_str()).or_insert(j.valid);
    }
    let missing: Vec<String> = overlap
        .iter()
        .filter(|u| !by_unit.contains_key(u.as_str()))
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(MetricsError::MissingJudgments { units: missing });
    }
    let valid = overlap.iter().filter(|u| by_unit[u.as_str()]).count();
    Ok(valid as f64 / overlap.len() as f64)
}

// ---------------------------------------------------------------------------
// Graph edit distance
// ---------------------------------------------------------------------------

/// Interned view of a graph for edit-distance computations: nodes in
/// canonical id order, labels as small integers, adjacency by ordered
/// node-index pair.
struct GedView {
    units: Vec<String>,
    /// Unit type per node, interned consistently across both graphs.
    unit_codes: Vec<i64>,
    adjacency: BTreeMap<(usize, usize), Vec<i64>>,
    degree: Vec<usize>,
    edge_count: usize,
}

const UNLABELED: i64 = -1;

fn intern_labels(graphs: [&ProcessGraph; 2]) -> Vec<GedView> {
    let mut labels: BTreeMap<String, i64> = BTreeMap::new();
    let mut unit_codes: BTreeMap<String, i64> = BTreeMap::new();
    for g in graphs {
        for e in g.edges() {
            if let Some(m) = &e.material {
                let next = labels.len() as i64;
                labels.entry(m.clone()).or_insert(next);
            }
        }
        for n in g.nodes() {
            let next = unit_codes.len() as i64;
            unit_codes.entry(n.unit.clone()).or_insert(next);
        }
    }
    graphs
        .iter()
        .map(|g| {
            let index: BTreeMap<&str, usize> = g
                .nodes()
                .iter()
                .enumerate()
                .map(|(i, n)| (n.id.as_str(), i))
                .collect();
            let mut adjacency: BTreeMap<(usize, usize), Vec<i64>> = BTreeMap::new();
            let mut degree = vec![0usize; g.nodes().len()];
            for e in g.edges() {
                let from = index[e.from.as_str()];
                let to = index[e.to.as_str()];
                let label = e.material.as_ref().map_or(UNLABELED, |m| labels[m]);
                adjacency.entry((from, to)).or_default().push(label);
                degree[from] += 1;
                degree[to] += 1;
            }
            for set in adjacency.values_mut() {
                set.sort_unstable();
            }
            GedView {
                units: g.nodes().iter().map(|n| n.unit.clone()).collect(),
                unit_codes: g.nodes().iter().map(|n| unit_codes[&n.unit]).collect(),
                adjacency,
                degree,
                edge_count: g.edges().len(),
            }
        })
        .collect()
}

/// Minimum cost to edit one sorted multiset into another: equal items
/// match for free, the rest pair up as substitutions when that is
/// cheaper than delete + insert.
fn multiset_edit_cost<T: Ord>(a: &[T], b: &[T], costs: &GedCosts) -> f64 {
    let mut only_a = 0usize;
    let mut only_b = 0usize;
    let (mut i, mut j) = (0usize, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Equal => {
                i += 1;
                j += 1;
            }
            std::cmp::Ordering::Less => {
                only_a += 1;
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                only_b += 1;
                j += 1;
            }
        }
    }
    only_a += a.len() - i;
    only_b += b.len() - j;
    let paired = if costs.edge_substitute <= costs.edge_delete + costs.edge_insert {
        only_a.min(only_b)
    } else {
        0
    };
    costs.edge_substitute * paired as f64
        + costs.edge_delete * (only_a - paired) as f64
        + costs.edge_insert * (only_b - paired) as f64
}

fn label_set_cost(a: &[i64], b: &[i64], costs: &GedCosts) -> f64 {
    multiset_edit_cost(a, b, costs)
}

static EMPTY_LABELS: &[i64] = &[];

fn pair_labels(view: &GedView, from: usize, to: usize) -> &[i64] {
    view.adjacency
        .get(&(from, to))
        .map_or(EMPTY_LABELS, |v| v.as_slice())
}

/// Default node-count ceiling for the exhaustive edit-distance search.
pub const DEFAULT_EXACT_NODE_LIMIT: usize = 6;

/// Exact graph edit distance by exhaustive enumeration of injective
/// partial node mappings with branch-and-bound pruning.
///
/// This is the oracle for [`approx_nged`]; it refuses graphs above
/// `node_limit` (typically [`DEFAULT_EXACT_NODE_LIMIT`]) because the
/// search is factorial.
pub fn exact_ged(
    g1: &ProcessGraph,
    g2: &ProcessGraph,
    costs: &GedCosts,
    node_limit: usize,
) -> Result<f64, MetricsError> {
    let nodes = g1.nodes().len().max(g2.nodes().len());
    if nodes > node_limit {
        return Err(MetricsError::SizeLimit {
            nodes,
            limit: node_limit,
        });
    }
    let views = intern_labels([g1, g2]);
    let (a, b) = (&views[0], &views[1]);
    let n1 = a.units.len();
    let n2 = b.units.len();

    // Delete everything, insert everything: a valid edit path that seeds
    // the branch-and-bound upper bound.
    let mut best = costs.node_delete * n1 as f64
        + costs.node_insert * n2 as f64
        + costs.edge_delete * a.edge_count as f64
        + costs.edge_insert * b.edge_count as f64;

    struct Search<'v> {
        a: &'v GedView,
        b: &'v GedView,
        costs: &'v GedCosts,
        mapping: Vec<Option<usize>>,
        used: Vec<bool>,
        best: f64,
    }

    impl Search<'_> {
        /// Edge cost contributed by deciding node `i`, against all
        /// previously decided nodes.
        fn step_edge_cost(&self, i: usize, target: Option<usize>) -> f64 {
            let mut cost = 0.0;
            for p in 0..i {
                for (x, y) in [(p, i), (i, p)] {
                    let labels1 = pair_labels(self.a, x, y);
                    match (self.mapping[p], target) {
                        (Some(mp), Some(mi)) => {
                            let (bx, by) = if x == p { (mp, mi) } else { (mi, mp) };
                            let labels2 = pair_labels(self.b, bx, by);
                            cost += label_set_cost(labels1, labels2, self.costs);
                        }
                        _ => cost += self.costs.edge_delete * labels1.len() as f64,
                    }
                }
            }
            cost
        }

        fn completion_cost(&self) -> f64 {
            let n2 = self.b.units.len();
            let uncovered = self.used.iter().filter(|u| !**u).count();
            let mut cost = self.costs.node_insert * uncovered as f64;
            for (&(x, y), labels) in &self.b.adjacency {
                if !self.used[x] || !self.used[y] {
                    cost += self.costs.edge_insert * labels.len() as f64;
                }
            }
            let _ = n2;
            cost
        }

        fn descend(&mut self, i: usize, partial: f64) {
            if partial >= self.best {
                return;
            }
            if i == self.a.units.len() {
                let total = partial + self.completion_cost();
                if total < self.best {
                    self.best = total;
                }
                return;
            }
            for j in 0..self.b.units.len() {
                if self.used[j] {
                    continue;
                }
                let step = self.costs.node_sub(&self.a.units[i], &self.b.units[j])
                    + self.step_edge_cost(i, Some(j));
                self.mapping[i] = Some(j);
                self.used[j] = true;
                self.descend(i + 1, partial + step);
                self.used[j] = false;
                self.mapping[i] = None;
            }
            let step = self.costs.node_delete + self.step_edge_cost(i, None);
            self.mapping[i] = None;
            self.descend(i + 1, partial + step);
        }
    }

    let mut search = Search {
        a,
        b,
        costs,
        mapping: vec![None; n1],
        used: vec![false; n2],
        best,
    };
    search.descend(0, 0.0);
    best = search.best;
    Ok(best)
}

/// Total edit cost induced by a node mapping (a-index → b-index, `None`
/// for deletion): node substitutions/deletions/insertions plus all edge
/// edits the mapping forces.
fn induced_cost(a: &GedView, b: &GedView, mapping: &[Option<usize>], costs: &GedCosts) -> f64 {
    let n2 = b.units.len();
    let mut covered = vec![false; n2];
    let mut cost = 0.0;
    for (i, target) in mapping.iter().enumerate() {
        match target {
            Some(j) => {
                covered[*j] = true;
                cost += costs.node_sub(&a.units[i], &b.units[*j]);
            }
            None => cost += costs.node_delete,
        }
    }
    cost += costs.node_insert * covered.iter().filter(|c| !**c).count() as f64;

    for (&(x, y), labels) in &a.adjacency {
        match (mapping[x], mapping[y]) {
            (Some(bx), Some(by)) => {
                cost += label_set_cost(labels, pair_labels(b, bx, by), costs);
            }
            _ => cost += costs.edge_delete * labels.len() as f64,
        }
    }
    for (&(x, y), labels) in &b.adjacency {
        if !covered[x] || !covered[y] {
            cost += costs.edge_insert * labels.len() as f64;
        } else {
            // Edges between covered pairs were compared above unless the
            // corresponding a-pair had no edges at all.
            let ax = mapping.iter().position(|m| *m == Some(x)).expect("covered");
            let ay = mapping.iter().position(|m| *m == Some(y)).expect("covered");
            if pair_labels(a, ax, ay).is_empty() {
                cost += costs.edge_insert * labels.len() as f64;
            }
        }
    }
    cost
}

/// Large-but-finite padding cost for forbidden assignment cells.
const FORBIDDEN: f64 = 1e6;

/// Assignment-based node mapping from `a` to `b`: substitution costs are
/// augmented with local star differences — the multiset of
/// (edge label, neighbor unit) pairs on each side — the matrix is padded
/// with per-node delete/insert costs, and ties are broken toward the
/// lexicographically smallest assignment (nodes are in canonical id
/// order). The star signature only steers the assignment; the returned
/// mapping is costed exactly afterwards.
fn lsap_mapping(a: &GedView, b: &GedView, costs: &GedCosts) -> Vec<Option<usize>> {
    let n1 = a.units.len();
    let n2 = b.units.len();
    let n = n1 + n2;
    if n == 0 {
        return Vec::new();
    }
    let star = |view: &GedView, i: usize, outgoing: bool| -> Vec<(i64, i64)> {
        let mut signature: Vec<(i64, i64)> = view
            .adjacency
            .iter()
            .filter(|((x, y), _)| if outgoing { *x == i } else { *y == i })
            .flat_map(|((x, y), labels)| {
                let neighbor = if outgoing { *y } else { *x };
                labels
                    .iter()
                    .map(move |label| (*label, view.unit_codes[neighbor]))
            })
            .collect();
        signature.sort_unstable();
        signature
    };
    let out_a: Vec<Vec<(i64, i64)>> = (0..n1).map(|i| star(a, i, true)).collect();
    let in_a: Vec<Vec<(i64, i64)>> = (0..n1).map(|i| star(a, i, false)).collect();
    let out_b: Vec<Vec<(i64, i64)>> = (0..n2).map(|j| star(b, j, true)).collect();
    let in_b: Vec<Vec<(i64, i64)>> = (0..n2).map(|j| star(b, j, false)).collect();

    let mut matrix = vec![vec![0.0f64; n]; n];
    for (i, row) in matrix.iter_mut().enumerate().take(n1) {
        for (j, cell) in row.iter_mut().enumerate().take(n2) {
            *cell = costs.node_sub(&a.units[i], &b.units[j])
                + multiset_edit_cost(&out_a[i], &out_b[j], costs)
                + multiset_edit_cost(&in_a[i], &in_b[j], costs);
        }
        for j in 0..n1 {
            row[n2 + j] = if i == j {
                costs.node_delete + costs.edge_delete * a.degree[i] as f64
            } else {
                FORBIDDEN
            };
        }
    }
    for (i, row) in matrix.iter_mut().enumerate().skip(n1) {
        for (j, cell) in row.iter_mut().enumerate().take(n2) {
            *cell = if i - n1 == j {
                costs.node_insert + costs.edge_insert * b.degree[j] as f64
            } else {
                FORBIDDEN
            };
        }
    }
    let (assignment, _) = lex_smallest_optimal(&matrix);
    (0..n1)
        .map(|i| {
            let j = assignment[i];
            (j < n2).then_some(j)
        })
        .collect()
}

/// Deterministic first-improvement local search over the node mapping:
/// swap two rows' targets, retarget a row to an unused column, or delete
/// a row's target. Every accepted move strictly lowers the true induced
/// cost, so the result stays a valid upper bound.
fn refine_mapping(
    a: &GedView,
    b: &GedView,
    mapping: &mut [Option<usize>],
    costs: &GedCosts,
) -> f64 {
    const MAX_PASSES: usize = 12;
    let n1 = a.units.len();
    let n2 = b.units.len();
    let mut current = induced_cost(a, b, mapping, costs);
    for _ in 0..MAX_PASSES {
        if current <= 0.0 {
            break;
        }
        let mut improved = false;
        'moves: for i in 0..n1 {
            for k in i + 1..n1 {
                if mapping[i] == mapping[k] {
                    continue;
                }
                mapping.swap(i, k);
                let candidate = induced_cost(a, b, mapping, costs);
                if candidate + 1e-12 < current {
                    current = candidate;
                    improved = true;
                    break 'moves;
                }
                mapping.swap(i, k);
            }
            let covered: BTreeSet<usize> = mapping.iter().flatten().copied().collect();
            let original = mapping[i];
            for j in 0..n2 {
                if covered.contains(&j) {
                    continue;
                }
                mapping[i] = Some(j);
                let candidate = induced_cost(a, b, mapping, costs);
                if candidate + 1e-12 < current {
                    current = candidate;
                    improved = true;
                    break 'moves;
                }
            }
            if original.is_some() {
                mapping[i] = None;
                let candidate = induced_cost(a, b, mapping, costs);
                if candidate + 1e-12 < current {
                    current = candidate;
                    improved = true;
                    break 'moves;
                }
            }
            mapping[i] = original;
        }
        if !improved {
            break;
        }
    }
    current
}

fn invert_mapping(mapping: &[Option<usize>], n_forward: usize) -> Vec<Option<usize>> {
    let mut inverted = vec![None; n_forward];
    for (i, target) in mapping.iter().enumerate() {
        if let Some(j) = target {
            inverted[*j] = Some(i);
        }
    }
    inverted
}

/// Approximate normalized graph edit distance in [0, 1].
///
/// Pipeline: build the padded node substitution-cost matrix, solve the
/// assignment optimally with lexicographic tie-breaking, add the edge
/// edits induced by the chosen mapping, then normalize by the larger
/// node count and clamp to 1.0 (edge-heavy cases can exceed the node
/// normalizer). Both orientations are evaluated and the cheaper mapping
/// wins, which also makes the score symmetric under the symmetric cost
/// model. The un-normalized value is an upper bound on [`exact_ged`].
pub fn approx_nged(g1: &ProcessGraph, g2: &ProcessGraph, costs: &GedCosts) -> f64 {
    let views = intern_labels([g1, g2]);
    let (a, b) = (&views[0], &views[1]);
    let n1 = a.units.len();
    let n2 = b.units.len();
    if n1 == 0 && n2 == 0 {
        return 0.0;
    }

    let mut forward = lsap_mapping(a, b, costs);
    let forward_cost = refine_mapping(a, b, &mut forward, costs);

    let reverse = lsap_mapping(b, a, &costs.reversed());
    let mut back = invert_mapping(&reverse, n1);
    let backward_cost = refine_mapping(a, b, &mut back, costs);

    let raw = forward_cost.min(backward_cost);
    let normalized = raw / n1.max(n2) as f64;
    normalized.clamp(0.0, 1.0)
}

/// Un-normalized assignment-based upper bound; exposed for oracle
/// comparisons against [`exact_ged`].
pub fn approx_ged_cost(g1: &ProcessGraph, g2: &ProcessGraph, costs: &GedCosts) -> f64 {
    let views = intern_labels([g1, g2]);
    let (a, b) = (&views[0], &views[1]);
    if a.units.is_empty() && b.units.is_empty() {
        return 0.0;
    }
    let mut forward = lsap_mapping(a, b, costs);
    let forward_cost = refine_mapping(a, b, &mut forward, costs);
    let reverse = lsap_mapping(b, a, &costs.reversed());
    let mut back = invert_mapping(&reverse, a.units.len());
    let backward_cost = refine_mapping(a, b, &mut back, costs);
    forward_cost.min(backward_cost)
}

// ---------------------------------------------------------------------------
// Path coverage and I/O validity
// ---------------------------------------------------------------------------

/// Constraint-satisfying path coverage: the fraction of critical-path
/// rules realized by a directed path in the graph. Sources are the nodes
/// of the named source unit, or every node whose unit emits the named
/// material. A rule whose source or target has no node is unsatisfied.
/// An empty rule list scores 1.0.
pub fn cspc(
    g: &ProcessGraph,
    rules: &[CriticalPathRule],
    kb: &KnowledgeBase,
) -> Result<f64, MetricsError> {
    if rules.is_empty() {
        return Ok(1.0);
    }
    let mut satisfied = 0usize;
    for rule in rules {
        if kb.unit(&rule.target_unit).is_none() {
            return Err(MetricsError::UnresolvedRule {
                rule: rule.id.clone(),
                detail: format!("target_unit {:?} is not in the KB", rule.target_unit),
            });
        }
        let sources: BTreeSet<String> = if kb.unit(&rule.source_predicate).is_some() {
            g.nodes()
                .iter()
                .filter(|n| n.unit == rule.source_predicate)
                .map(|n| n.id.clone())
                .collect()
        } else if kb.has_material(&rule.source_predicate) {
            g.nodes()
                .iter()
                .filter(|n| {
                    kb.unit(&n.unit)
                        .is_some_and(|u| u.outputs.contains(&rule.source_predicate))
                })
                .map(|n| n.id.clone())
                .collect()
        } else {
            return Err(MetricsError::UnresolvedRule {
                rule: rule.id.clone(),
                detail: format!(
                    "source_predicate {:?} names neither a unit nor a material",
                    rule.source_predicate
                ),
            });
        };
        let targets: BTreeSet<String> = g
            .nodes()
            .iter()
            .filter(|n| n.unit == rule.target_unit)
            .map(|n| n.id.clone())
            .collect();
        if !sources.is_empty() && !targets.is_empty() && reachable(g, &sources, &targets)? {
            satisfied += 1;
        }
    }
    Ok(satisfied as f64 / rules.len() as f64)
}

/// Unit I/O validity rate: the fraction of nodes whose incident edges
/// satisfy their unit's I/O rules. An empty graph scores 1.0.
pub fn iov(g: &ProcessGraph, kb: &KnowledgeBase) -> Result<f64, MetricsError> {
    if g.nodes().is_empty() {
        return Ok(1.0);
    }
    let validity = unit_io_validity(g, kb)?;
    let valid = validity.values().filter(|v| **v).count();
    Ok(valid as f64 / validity.len() as f64)
}

// ---------------------------------------------------------------------------
// Report assembly
// ---------------------------------------------------------------------------

/// Canonical archetype ordering for reports: fuel, petrochemical,
/// aromatics, then anything else alphabetically.
pub(crate) fn archetype_sort_key(archetype: &str) -> (usize, String) {
    let rank = match archetype {
        "fuel" => 0,
        "petrochemical" => 1,
        "aromatics" => 2,
        _ => 3,
    };
    (rank, archetype.to_string())
}

/// All five scores for one benchmark task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredTask {
    pub task_id: String,
    pub archetype: String,
    pub unf1: f64,
    pub cotc: f64,
    pub nged: f64,
    pub cspc: f64,
    pub iov: f64,
}

/// Unweighted per-scope means. `scope` is an archetype or `"overall"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub scope: String,
    pub tasks: usize,
    pub unf1: f64,
    pub cotc: f64,
    pub nged: f64,
    pub cspc: f64,
    pub iov: f64,
}

/// Per-task scores plus per-archetype and overall aggregates, in
/// deterministic row order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub per_task: Vec<ScoredTask>,
    pub aggregates: Vec<AggregateRow>,
}

fn mean<F: Fn(&ScoredTask) -> f64>(tasks: &[&ScoredTask], f: F) -> f64 {
    tasks.iter().map(|t| f(t)).sum::<f64>() / tasks.len() as f64
}

fn aggregate(scope: &str, tasks: &[&ScoredTask]) -> AggregateRow {
    AggregateRow {
        scope: scope.to_string(),
        tasks: tasks.len(),
        unf1: mean(tasks, |t| t.unf1),
        cotc: mean(tasks, |t| t.cotc),
        nged: mean(tasks, |t| t.nged),
        cspc: mean(tasks, |t| t.cspc),
        iov: mean(tasks, |t| t.iov),
    }
}

/// Assemble the score report: rows sorted by archetype order then task
/// id, one aggregate row per archetype plus an overall row. Zero tasks
/// produce an empty report with no aggregates.
pub fn score_report(tasks: &[ScoredTask]) -> ScoreReport {
    let mut per_task = tasks.to_vec();
    per_task.sort_by(|x, y| {
        (archetype_sort_key(&x.archetype), &x.task_id)
            .cmp(&(archetype_sort_key(&y.archetype), &y.task_id))
    });
    if per_task.is_empty() {
        return ScoreReport {
            per_task,
            aggregates: Vec::new(),
        };
    }
    let mut archetypes: Vec<String> = per_task.iter().map(|t| t.archetype.clone()).collect();
    archetypes.dedup();
    let mut aggregates = Vec::new();
    for archetype in &archetypes {
        let rows: Vec<&ScoredTask> = per_task
            .iter()
            .filter(|t| &t.archetype == archetype)
            .collect();
        aggregates.push(aggregate(archetype, &rows));
    }
    let all: Vec<&ScoredTask> = per_task.iter().collect();
    aggregates.push(aggregate("overall", &all));
    ScoreReport {
        per_task,
        aggregates,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{GraphEdge, GraphNode, ProcessGraph};

    fn sel(ids: &[&str]) -> UnitSelection {
        UnitSelection::from_canonical(ids.iter().copied())
    }

    fn node(id: &str, unit: &str) -> GraphNode {
        GraphNode {
            id: id.into(),
            unit: unit.into(),
        }
    }

    fn metrics_kb() -> KnowledgeBase {
        KnowledgeBase::from_json_str(
            r#"{
              "format_version": "1",
              "materials": [{"id": "crude"}, {"id": "naphtha"}, {"id": "gasoline"},
                            {"id": "hydrogen"}, {"id": "sour_gas"}, {"id": "sulfur"}],
              "units": [
                {"id": "cdu", "inputs": ["crude"], "outputs": ["naphtha", "sour_gas"]},
                {"id": "fcc", "inputs": ["naphtha"], "outputs": ["gasoline"]},
                {"id": "hydrogen_plant", "inputs": ["naphtha"], "outputs": ["hydrogen"]},
                {"id": "hydrotreater", "inputs": ["naphtha", "hydrogen"], "outputs": ["gasoline"],
                 "io_rules": [{"kind": "requires_input", "material": "hydrogen",
                               "description": ""}]},
                {"id": "sulfur_recovery", "inputs": ["sour_gas"], "outputs": ["sulfur"]}
              ],
              "critical_paths": [
                {"id": "sour_to_recovery", "source_predicate": "sour_gas",
                 "target_unit": "sulfur_recovery"},
                {"id": "cdu_to_fcc", "source_predicate": "cdu", "target_unit": "fcc"}
              ],
              "archetypes": ["fuel"]
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn f1_identical_sets_score_one() {
        let s = sel(&["a", "b", "c", "d", "e"]);
        assert_eq!(unit_selection_f1(&s, &s), 1.0);
    }

    #[test]
    fn f1_disjoint_sets_score_zero() {
        assert_eq!(unit_selection_f1(&sel(&["a", "b"]), &sel(&["c", "d"])), 0.0);
    }

    #[test]
    fn f1_matches_the_hand_computed_case() {
        // |pred| = 4, |gt| = 5, |overlap| = 3 → 2·3/9.
        let pred = sel(&["a", "b", "c", "x"]);
        let gt = sel(&["a", "b", "c", "y", "z"]);
        assert!((unit_selection_f1(&pred, &gt) - 2.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn f1_is_symmetric_and_both_empty_is_one() {
        let pred = sel(&["a", "b"]);
        let gt = sel(&["b", "c", "d"]);
        assert_eq!(unit_selection_f1(&pred, &gt), unit_selection_f1(&gt, &pred));
        assert_eq!(unit_selection_f1(&sel(&[]), &sel(&[])), 1.0);
    }

    fn judgment(unit: &str, valid: bool) -> JustificationJudgment {
        JustificationJudgment {
            unit: unit.into(),
            valid,
            judge: Judge::Rule,
            note: String::new(),
        }
    }

    #[test]
    fn cotc_counts_valid_fractions_over_the_intersection() {
        let pred = sel(&["a", "b", "c", "d"]);
        let gt = sel(&["a", "b", "c", "d", "e"]);
        let all = vec![
            judgment("a", true),
            judgment("b", true),
            judgment("c", true),
            judgment("d", true),
        ];
        assert_eq!(cot_correctness(&all, &pred, &gt).unwrap(), 1.0);
        let half = vec![
            judgment("a", true),
            judgment("b", true),
            judgment("c", false),
            judgment("d", false),
        ];
        assert_eq!(cot_correctness(&half, &pred, &gt).unwrap(), 0.5);
    }

    #[test]
    fn cotc_empty_intersection_scores_zero() {
        assert_eq!(
            cot_correctness(&[], &sel(&["a"]), &sel(&["b"])).unwrap(),
            0.0
        );
    }

    #[test]
    fn cotc_requires_full_judgment_coverage() {
        let err = cot_correctness(&[judgment("a", true)], &sel(&["a", "b"]), &sel(&["a", "b"]))
            .unwrap_err();
        match err {
            MetricsError::MissingJudgments { units } => assert_eq!(units, vec!["b".to_string()]),
            other => panic!("expected MissingJudgments, got {other:?}"),
        }
    }

    fn single(unit: &str) -> ProcessGraph {
        ProcessGraph::new(vec![node("n1", unit)], vec![]).unwrap()
    }

    fn chain() -> ProcessGraph {
        ProcessGraph::new(
            vec![node("u1", "cdu"), node("u2", "fcc"), node("u3", "hydrotreater")],
            vec![
                GraphEdge::new("u1", "u2", Some("naphtha".into())),
                GraphEdge::new("u1", "u3", Some("naphtha".into())),
            ],
        )
        .unwrap()
    }

    #[test]
    fn exact_ged_is_zero_on_identical_graphs() {
        let g = chain();
        assert_eq!(exact_ged(&g, &g, &GedCosts::default(), 6).unwrap(), 0.0);
    }

    #[test]
    fn exact_ged_single_substitution_costs_one() {
        // Two possible mappings: substitute (1.0) or delete + insert (2.0).
        let d = exact_ged(&single("cdu"), &single("fcc"), &GedCosts::default(), 6).unwrap();
        assert_eq!(d, 1.0);
    }

    #[test]
    fn exact_ged_extra_isolated_node_costs_one() {
        let g = chain();
        let mut nodes: Vec<GraphNode> = g.nodes().to_vec();
        nodes.push(node("u9", "hydrogen_plant"));
        let bigger = ProcessGraph::new(nodes, g.edges().to_vec()).unwrap();
        assert_eq!(exact_ged(&g, &bigger, &GedCosts::default(), 6).unwrap(), 1.0);
    }

    #[test]
    fn exact_ged_enforces_the_node_limit() {
        let nodes: Vec<GraphNode> = (0..7).map(|i| node(&format!("n{i}"), "cdu")).collect();
        let big = ProcessGraph::new(nodes, vec![]).unwrap();
        assert!(matches!(
            exact_ged(&big, &big, &GedCosts::default(), 6),
            Err(MetricsError::SizeLimit { nodes: 7, limit: 6 })
        ));
    }

    #[test]
    fn approx_nged_is_zero_on_identical_graphs() {
        let g = chain();
        assert_eq!(approx_nged(&g, &g, &GedCosts::default()), 0.0);
    }

    #[test]
    fn approx_nged_single_substitution_normalizes_to_one() {
        assert_eq!(
            approx_nged(&single("cdu"), &single("fcc"), &GedCosts::default()),
            1.0
        );
    }

    #[test]
    fn approx_upper_bounds_exact_on_a_small_pair() {
        let costs = GedCosts::default();
        let g1 = chain();
        let g2 = ProcessGraph::new(
            vec![
                node("u1", "cdu"),
                node("u2", "fcc"),
                node("u3", "hydrotreater"),
                node("u4", "hydrogen_plant"),
                node("u5", "sulfur_recovery"),
            ],
            vec![
                GraphEdge::new("u1", "u2", Some("naphtha".into())),
                GraphEdge::new("u1", "u5", Some("sour_gas".into())),
                GraphEdge::new("u4", "u3", Some("hydrogen".into())),
            ],
        )
        .unwrap();
        let exact = exact_ged(&g1, &g2, &costs, 6).unwrap();
        let raw = approx_ged_cost(&g1, &g2, &costs);
        assert!(raw >= exact - 1e-9, "raw {raw} must dominate exact {exact}");
        let nged = approx_nged(&g1, &g2, &costs);
        assert!(nged * 5.0 >= exact - 1e-9);
        assert!((0.0..=1.0).contains(&nged));
    }

    #[test]
    fn approx_nged_empty_graphs_score_zero() {
        let empty = ProcessGraph::empty();
        assert_eq!(approx_nged(&empty, &empty, &GedCosts::default()), 0.0);
    }

    #[test]
    fn cspc_counts_satisfied_rules() {
        let kb = metrics_kb();
        // cdu → fcc satisfied; sour_gas → sulfur_recovery has no target node.
        let g = ProcessGraph::new(
            vec![node("u1", "cdu"), node("u2", "fcc")],
            vec![GraphEdge::new("u1", "u2", Some("naphtha".into()))],
        )
        .unwrap();
        let score = cspc(&g, &kb.critical_paths, &kb).unwrap();
        assert_eq!(score, 0.5);

        let g2 = ProcessGraph::new(
            vec![node("u1", "cdu"), node("u2", "fcc"), node("u3", "sulfur_recovery")],
            vec![
                GraphEdge::new("u1", "u2", Some("naphtha".into())),
                GraphEdge::new("u1", "u3", Some("sour_gas".into())),
            ],
        )
        .unwrap();
        assert_eq!(cspc(&g2, &kb.critical_paths, &kb).unwrap(), 1.0);
        assert_eq!(cspc(&g2, &[], &kb).unwrap(), 1.0);
    }

    #[test]
    fn cspc_rejects_unresolvable_rules() {
        let kb = metrics_kb();
        let g = single("cdu");
        let rule = CriticalPathRule {
            id: "bogus".into(),
            source_predicate: "unobtainium".into(),
            target_unit: "fcc".into(),
            description: String::new(),
        };
        assert!(matches!(
            cspc(&g, &[rule], &kb),
            Err(MetricsError::UnresolvedRule { .. })
        ));
    }

    #[test]
    fn iov_scores_the_valid_fraction() {
        let kb = metrics_kb();
        // Three rule-free nodes plus one starving hydrotreater → 0.75.
        let g = ProcessGraph::new(
            vec![
                node("u1", "cdu"),
                node("u2", "fcc"),
                node("u3", "sulfur_recovery"),
                node("u4", "hydrotreater"),
            ],
            vec![
                GraphEdge::new("u1", "u2", Some("naphtha".into())),
                GraphEdge::new("u1", "u3", Some("sour_gas".into())),
                GraphEdge::new("u1", "u4", Some("naphtha".into())),
            ],
        )
        .unwrap();
        assert_eq!(iov(&g, &kb).unwrap(), 0.75);
    }

    #[test]
    fn iov_vacuous_and_degenerate_cases() {
        let kb = metrics_kb();
        let rule_free = ProcessGraph::new(
            vec![node("u1", "cdu"), node("u2", "fcc")],
            vec![GraphEdge::new("u1", "u2", None)],
        )
        .unwrap();
        assert_eq!(iov(&rule_free, &kb).unwrap(), 1.0);
        assert_eq!(iov(&single("hydrotreater"), &kb).unwrap(), 0.0);
        assert_eq!(iov(&ProcessGraph::empty(), &kb).unwrap(), 1.0);
    }

    fn scored(task_id: &str, archetype: &str, value: f64) -> ScoredTask {
        ScoredTask {
            task_id: task_id.into(),
            archetype: archetype.into(),
            unf1: value,
            cotc: value,
            nged: value,
            cspc: value,
            iov: value,
        }
    }

    #[test]
    fn report_means_are_unweighted() {
        let report = score_report(&[
            scored("t2", "petrochemical", 0.5),
            scored("t1", "fuel", 1.0),
            scored("t3", "aromatics", 0.0),
        ]);
        assert_eq!(report.per_task[0].task_id, "t1");
        assert_eq!(report.aggregates.len(), 4);
        let overall = report.aggregates.last().unwrap();
        assert_eq!(overall.scope, "overall");
        assert!((overall.unf1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn report_with_zero_tasks_is_empty() {
        let report = score_report(&[]);
        assert!(report.per_task.is_empty());
        assert!(report.aggregates.is_empty());
    }
}
