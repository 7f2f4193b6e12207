//! Knowledge-base model: materials, unit I/O schemas, motifs, and rules.
//!
//! The knowledge base is the single source of truth for what a unit may
//! consume and emit. Everything downstream — compatibility checking,
//! synthesis, scoring — resolves names against it. Resolution is exact
//! after normalization (lowercase, trimmed, collapsed whitespace); there
//! is deliberately no fuzzy matching, so scores stay deterministic.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Current on-disk format version for KB and graph files.
pub const FORMAT_VERSION: &str = "1";

#[derive(Debug, Error)]
pub enum KbError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {path}: {detail}")]
    Parse { path: String, detail: String },
    #[error("unsupported format_version {found:?} (expected {FORMAT_VERSION:?})")]
    UnsupportedVersion { found: String },
    #[error("knowledge base is invalid:\n{}", format_violations(.violations))]
    Invalid { violations: Vec<KbViolation> },
    #[error("unresolved unit name {token:?}")]
    UnresolvedName { token: String },
}

fn format_violations(violations: &[KbViolation]) -> String {
    violations
        .iter()
        .map(|v| format!("  - {v}"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// One violated invariant, naming the entity it was found on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KbViolation {
    pub entity: String,
    pub detail: String,
}

impl fmt::Display for KbViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.entity, self.detail)
    }
}

/// A material in the global property space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Material {
    /// Canonical lowercase token, e.g. `"naphtha"`.
    pub id: String,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub aliases: BTreeSet<String>,
    /// Opaque key → value map (e.g. a sulfur class).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub properties: BTreeMap<String, String>,
}

/// Kind of a per-unit I/O rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IoRuleKind {
    RequiresInput,
    RequiresOutput,
    ForbidsInput,
}

/// Domain requirement on a unit's incident edges, e.g. "a hydrotreater
/// requires a hydrogen feed".
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IoRule {
    pub kind: IoRuleKind,
    pub material: String,
    #[serde(default)]
    pub description: String,
}

/// A processing unit and its inherent input/output material sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitSpec {
    /// Canonical unit token, e.g. `"cdu"`.
    pub id: String,
    #[serde(default)]
    pub display_name: String,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub aliases: BTreeSet<String>,
    pub inputs: BTreeSet<String>,
    pub outputs: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub io_rules: Vec<IoRule>,
}

impl UnitSpec {
    /// Materials of the given rule kind, in sorted order.
    pub fn rule_materials(&self, kind: IoRuleKind) -> impl Iterator<Item = &str> {
        self.io_rules
            .iter()
            .filter(move |r| r.kind == kind)
            .map(|r| r.material.as_str())
    }
}

/// Global routing requirement: streams from a source (a unit, or any unit
/// emitting a material) must reach a designated target unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriticalPathRule {
    pub id: String,
    /// Either a unit id or a material id; material means "any unit that
    /// emits it". Unit ids win when a token names both.
    pub source_predicate: String,
    pub target_unit: String,
    #[serde(default)]
    pub description: String,
}

/// One edge of a motif. `material = None` means an unlabeled stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MotifEdge {
    pub from: String,
    pub to: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub material: Option<String>,
}

/// A proven subgraph pattern recurring across real refinery
/// configurations; the retrieval prototype for synthesis.
///
/// A motif whose `provenance` contains an archetype token (after
/// normalization) applies to that archetype only; motifs without any
/// archetype token apply to all archetypes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Motif {
    pub id: String,
    pub unit_ids: Vec<String>,
    pub edges: Vec<MotifEdge>,
    #[serde(default)]
    pub provenance: String,
}

/// The verified process knowledge base.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeBase {
    pub materials: Vec<Material>,
    pub units: Vec<UnitSpec>,
    #[serde(default)]
    pub motifs: Vec<Motif>,
    #[serde(default)]
    pub critical_paths: Vec<CriticalPathRule>,
    pub archetypes: BTreeSet<String>,
}

impl KnowledgeBase {
    pub fn unit(&self, id: &str) -> Option<&UnitSpec> {
        self.units.iter().find(|u| u.id == id)
    }

    pub fn material(&self, id: &str) -> Option<&Material> {
        self.materials.iter().find(|m| m.id == id)
    }

    pub fn has_material(&self, id: &str) -> bool {
        self.material(id).is_some()
    }

    /// Units that emit `material`, in KB order.
    pub fn emitters_of(&self, material: &str) -> Vec<&UnitSpec> {
        self.units
            .iter()
            .filter(|u| u.outputs.contains(material))
            .collect()
    }

    /// Shared materials flowing from `from` to `to`, i.e. Out(from) ∩ In(to).
    pub fn shared_materials(&self, from: &UnitSpec, to: &UnitSpec) -> BTreeSet<String> {
        from.outputs.intersection(&to.inputs).cloned().collect()
    }

    /// Whether a motif applies to the given archetype. Motifs tagged with
    /// an archetype token in their provenance are archetype-specific;
    /// untagged motifs are universal.
    pub fn motif_matches_archetype(&self, motif: &Motif, archetype: &str) -> bool {
        let tokens: BTreeSet<String> = motif
            .provenance
            .split(|c: char| !c.is_alphanumeric() && c != '_')
            .map(normalize_name)
            .filter(|t| !t.is_empty())
            .collect();
        let tagged: Vec<&String> = tokens.iter().filter(|t| self.archetypes.contains(*t)).collect();
        tagged.is_empty() || tagged.iter().any(|t| t.as_str() == archetype)
    }

    /// Invariant check for a design intent against this KB.
    pub fn check_intent(&self, intent: &DesignIntent) -> Vec<KbViolation> {
        let mut violations = Vec::new();
        let entity = "intent".to_string();
        if intent.feedstock.is_empty() {
            violations.push(KbViolation {
                entity: entity.clone(),
                detail: "feedstock must be nonempty".into(),
            });
        }
        if intent.products.is_empty() {
            violations.push(KbViolation {
                entity: entity.clone(),
                detail: "products must be nonempty".into(),
            });
        }
        if !self.archetypes.contains(&intent.archetype) {
            violations.push(KbViolation {
                entity: entity.clone(),
                detail: format!("unknown archetype {:?}", intent.archetype),
            });
        }
        for m in intent.feedstock.iter().chain(intent.products.iter()) {
            if !self.has_material(m) {
                violations.push(KbViolation {
                    entity: entity.clone(),
                    detail: format!("unknown material {m:?}"),
                });
            }
        }
        violations
    }

    pub fn from_json_str(text: &str) -> Result<Self, KbError> {
        parse_kb_text(text, "<string>")
    }

    pub fn to_json_string(&self) -> String {
        let file = KbFile {
            format_version: FORMAT_VERSION.to_string(),
            kb: self.clone(),
        };
        let mut out = serde_json::to_string_pretty(&file).expect("kb serialization cannot fail");
        out.push('\n');
        out
    }
}

/// The design-intent tuple: feedstock, product objectives, refinery
/// archetype, and free-form operational constraints.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignIntent {
    pub feedstock: Vec<String>,
    pub products: Vec<String>,
    pub archetype: String,
    #[serde(default)]
    pub constraints: Vec<String>,
}

impl DesignIntent {
    /// Canonical single-line JSON form, used for fingerprinting and for
    /// embedding intents in prompts and training records.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("intent serialization cannot fail")
    }
}

#[derive(Serialize, Deserialize)]
struct KbFile {
    format_version: String,
    #[serde(flatten)]
    kb: KnowledgeBase,
}

/// Normalization applied before any name comparison: lowercase, trim,
/// collapse internal whitespace.
pub fn normalize_name(raw: &str) -> String {
    raw.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Token-boundary containment check on pre-normalized strings. A match
/// must not sit inside a longer word, so "reformer" never matches inside
/// "reformer_feed" or "xreformer".
pub fn mentions_token(text_norm: &str, token_norm: &str) -> bool {
    if token_norm.is_empty() {
        return false;
    }
    let bytes = text_norm.as_bytes();
    let is_word = |b: u8| b.is_ascii_alphanumeric() || b == b'_';
    let mut start = 0;
    while let Some(pos) = text_norm[start..].find(token_norm) {
        let begin = start + pos;
        let end = begin + token_norm.len();
        let left_ok = begin == 0 || !is_word(bytes[begin - 1]);
        let right_ok = end == bytes.len() || !is_word(bytes[end]);
        if left_ok && right_ok {
            return true;
        }
        start = begin + 1;
        if start >= text_norm.len() {
            break;
        }
    }
    false
}

fn any_name_mentioned<'a>(
    text_norm: &str,
    names: impl IntoIterator<Item = &'a String>,
) -> bool {
    names
        .into_iter()
        .any(|name| mentions_token(text_norm, &normalize_name(name)))
}

/// Canonical ids of every KB unit mentioned in the text, matching ids,
/// display names, and aliases at token boundaries.
pub fn units_mentioned(text: &str, kb: &KnowledgeBase) -> BTreeSet<String> {
    let norm = normalize_name(text);
    kb.units
        .iter()
        .filter(|u| {
            mentions_token(&norm, &u.id)
                || any_name_mentioned(&norm, u.aliases.iter())
                || (!u.display_name.is_empty()
                    && mentions_token(&norm, &normalize_name(&u.display_name)))
        })
        .map(|u| u.id.clone())
        .collect()
}

/// Canonical ids of every KB material mentioned in the text.
pub fn materials_mentioned(text: &str, kb: &KnowledgeBase) -> BTreeSet<String> {
    let norm = normalize_name(text);
    kb.materials
        .iter()
        .filter(|m| mentions_token(&norm, &m.id) || any_name_mentioned(&norm, m.aliases.iter()))
        .map(|m| m.id.clone())
        .collect()
}

/// Declarative form of one engineering-mechanism check, evaluated over a
/// design intent and a unit selection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PredicateCheck {
    /// If any selected unit declares `requires_input material`, some
    /// selected unit must emit that material (e.g. hydrogen balance).
    RequiresProducerWhenConsumer { material: String },
    /// If any selected unit emits the material, the handler unit must be
    /// selected (e.g. sour streams need sulfur recovery on site).
    RequiresHandlerWhenEmitter { material: String, handler: String },
    /// If `present` is selected, `required` must be selected too.
    RequiresUnitWhenUnit { present: String, required: String },
    /// Intents of the archetype must select the unit.
    RequiresUnitForArchetype { archetype: String, unit: String },
}

/// A predefined chemical-engineering predicate, shipped as data so the
/// rule set can evolve without code changes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MechanismPredicate {
    pub id: String,
    #[serde(default)]
    pub description: String,
    pub check: PredicateCheck,
}

/// Check that predicates reference only KB entities.
pub fn validate_predicates(
    predicates: &[MechanismPredicate],
    kb: &KnowledgeBase,
) -> Vec<KbViolation> {
    let mut out = Vec::new();
    for p in predicates {
        let entity = format!("predicate {:?}", p.id);
        let mut missing_material = |m: &str| {
            if !kb.has_material(m) {
                out.push(KbViolation {
                    entity: entity.clone(),
                    detail: format!("references unknown material {m:?}"),
                });
            }
        };
        match &p.check {
            PredicateCheck::RequiresProducerWhenConsumer { material } => missing_material(material),
            PredicateCheck::RequiresHandlerWhenEmitter { material, handler } => {
                missing_material(material);
                if kb.unit(handler).is_none() {
                    out.push(KbViolation {
                        entity: entity.clone(),
                        detail: format!("references unknown unit {handler:?}"),
                    });
                }
            }
            PredicateCheck::RequiresUnitWhenUnit { present, required } => {
                for unit in [present, required] {
                    if kb.unit(unit).is_none() {
                        out.push(KbViolation {
                            entity: entity.clone(),
                            detail: format!("references unknown unit {unit:?}"),
                        });
                    }
                }
            }
            PredicateCheck::RequiresUnitForArchetype { archetype, unit } => {
                if !kb.archetypes.contains(archetype) {
                    out.push(KbViolation {
                        entity: entity.clone(),
                        detail: format!("references unknown archetype {archetype:?}"),
                    });
                }
                if kb.unit(unit).is_none() {
                    out.push(KbViolation {
                        entity: entity.clone(),
                        detail: format!("references unknown unit {unit:?}"),
                    });
                }
            }
        }
    }
    out
}

/// Evaluate one predicate over (intent, selected units).
pub fn predicate_holds(
    predicate: &MechanismPredicate,
    intent: &DesignIntent,
    units: &BTreeSet<String>,
    kb: &KnowledgeBase,
) -> bool {
    match &predicate.check {
        PredicateCheck::RequiresProducerWhenConsumer { material } => {
            let consumer_present = units.iter().any(|id| {
                kb.unit(id).is_some_and(|u| {
                    u.rule_materials(IoRuleKind::RequiresInput)
                        .any(|m| m == material)
                })
            });
            if !consumer_present {
                return true;
            }
            units
                .iter()
                .any(|id| kb.unit(id).is_some_and(|u| u.outputs.contains(material)))
        }
        PredicateCheck::RequiresHandlerWhenEmitter { material, handler } => {
            let emitter_present = units
                .iter()
                .any(|id| kb.unit(id).is_some_and(|u| u.outputs.contains(material)));
            !emitter_present || units.contains(handler)
        }
        PredicateCheck::RequiresUnitWhenUnit { present, required } => {
            !units.contains(present) || units.contains(required)
        }
        PredicateCheck::RequiresUnitForArchetype { archetype, unit } => {
            intent.archetype != *archetype || units.contains(unit)
        }
    }
}

/// Resolve a raw unit name to its canonical id.
///
/// Matching is exact after normalization, against unit ids, display
/// names, and aliases. No fuzzy matching: an unresolved name is an error
/// carrying the normalized token.
pub fn canonicalize_unit_name(raw: &str, kb: &KnowledgeBase) -> Result<String, KbError> {
    let token = normalize_name(raw);
    for unit in &kb.units {
        if unit.id == token
            || normalize_name(&unit.display_name) == token
            || unit.aliases.iter().any(|a| normalize_name(a) == token)
        {
            return Ok(unit.id.clone());
        }
    }
    Err(KbError::UnresolvedName { token })
}

/// Load and fully validate a knowledge base from a JSON file.
pub fn load_knowledge_base(path: &Path) -> Result<KnowledgeBase, KbError> {
    let text = std::fs::read_to_string(path).map_err(|source| KbError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_kb_text(&text, &path.display().to_string())
}

fn parse_kb_text(text: &str, path: &str) -> Result<KnowledgeBase, KbError> {
    let file: KbFile = serde_json::from_str(text).map_err(|e| KbError::Parse {
        path: path.to_string(),
        detail: e.to_string(),
    })?;
    if file.format_version != FORMAT_VERSION {
        return Err(KbError::UnsupportedVersion {
            found: file.format_version,
        });
    }
    let violations = validate_knowledge_base(&file.kb);
    if !violations.is_empty() {
        return Err(KbError::Invalid { violations });
    }
    Ok(file.kb)
}

/// Check every invariant of every contained type. An empty list means the
/// KB is well-formed; violations are data, not errors.
pub fn validate_knowledge_base(kb: &KnowledgeBase) -> Vec<KbViolation> {
    let mut out = Vec::new();
    let mut push = |entity: &str, detail: String| {
        out.push(KbViolation {
            entity: entity.to_string(),
            detail,
        });
    };

    // Materials: canonical ids, unique, alias namespace free of collisions.
    let mut material_ids: BTreeSet<&str> = BTreeSet::new();
    let mut material_names: BTreeMap<String, String> = BTreeMap::new();
    for m in &kb.materials {
        let entity = format!("material {:?}", m.id);
        if m.id.is_empty() {
            push(&entity, "id must be nonempty".into());
            continue;
        }
        if !material_ids.insert(&m.id) {
            push(&entity, "duplicate material id".into());
        }
        if normalize_name(&m.id) != m.id {
            push(&entity, "id must be a canonical lowercase token".into());
        }
        for name in std::iter::once(&m.id).chain(m.aliases.iter()) {
            let key = normalize_name(name);
            if let Some(owner) = material_names.get(&key) {
                if owner != &m.id {
                    push(
                        &entity,
                        format!("name {name:?} collides with material {owner:?}"),
                    );
                }
            } else {
                material_names.insert(key, m.id.clone());
            }
        }
    }

    // Units: canonical unique ids, resolvable I/O sets, nonempty outputs,
    // and a collision-free name namespace so canonicalization stays
    // deterministic.
    let mut unit_ids: BTreeSet<&str> = BTreeSet::new();
    let mut unit_names: BTreeMap<String, String> = BTreeMap::new();
    for u in &kb.units {
        let entity = format!("unit {:?}", u.id);
        if u.id.is_empty() {
            push(&entity, "id must be nonempty".into());
            continue;
        }
        if !unit_ids.insert(&u.id) {
            push(&entity, "duplicate unit id".into());
        }
        if normalize_name(&u.id) != u.id {
            push(&entity, "id must be a canonical lowercase token".into());
        }
        if u.outputs.is_empty() {
            push(&entity, "outputs must be nonempty".into());
        }
        for name in std::iter::once(&u.id)
            .chain(u.aliases.iter())
            .chain((!u.display_name.is_empty()).then_some(&u.display_name))
        {
            let key = normalize_name(name);
            if key.is_empty() {
                continue;
            }
            if let Some(owner) = unit_names.get(&key) {
                if owner != &u.id {
                    push(&entity, format!("name {name:?} collides with unit {owner:?}"));
                }
            } else {
                unit_names.insert(key, u.id.clone());
            }
        }
        for m in u.inputs.iter().chain(u.outputs.iter()) {
            if !kb.has_material(m) {
                push(&entity, format!("references unknown material {m:?}"));
            }
        }
        for rule in &u.io_rules {
            if !kb.has_material(&rule.material) {
                push(
                    &entity,
                    format!("io_rule references unknown material {:?}", rule.material),
                );
            }
        }
    }

    // Motifs: resolvable unit ids, edges inside the motif, and material
    // compatibility on every edge.
    let mut motif_ids: BTreeSet<&str> = BTreeSet::new();
    for motif in &kb.motifs {
        let entity = format!("motif {:?}", motif.id);
        if !motif_ids.insert(&motif.id) {
            push(&entity, "duplicate motif id".into());
        }
        let mut members: BTreeSet<&str> = BTreeSet::new();
        for uid in &motif.unit_ids {
            if kb.unit(uid).is_none() {
                push(&entity, format!("references unknown unit {uid:?}"));
            }
            if !members.insert(uid) {
                push(&entity, format!("unit {uid:?} listed twice"));
            }
        }
        for edge in &motif.edges {
            if !members.contains(edge.from.as_str()) || !members.contains(edge.to.as_str()) {
                push(
                    &entity,
                    format!("edge {} -> {} leaves the motif's unit list", edge.from, edge.to),
                );
                continue;
            }
            let (Some(from), Some(to)) = (kb.unit(&edge.from), kb.unit(&edge.to)) else {
                continue; // unknown-unit violation already recorded
            };
            let shared = kb.shared_materials(from, to);
            match &edge.material {
                Some(m) => {
                    if !kb.has_material(m) {
                        push(&entity, format!("edge references unknown material {m:?}"));
                    } else if !shared.contains(m) {
                        push(
                            &entity,
                            format!(
                                "edge {} -> {} [{m}] is incompatible: material not in Out({}) ∩ In({})",
                                edge.from, edge.to, edge.from, edge.to
                            ),
                        );
                    }
                }
                None => {
                    if shared.is_empty() {
                        push(
                            &entity,
                            format!(
                                "edge {} -> {} is incompatible: Out({}) ∩ In({}) is empty",
                                edge.from, edge.to, edge.from, edge.to
                            ),
                        );
                    }
                }
            }
        }
    }

    // Critical-path rules: ids unique, endpoints resolvable.
    let mut rule_ids: BTreeSet<&str> = BTreeSet::new();
    for rule in &kb.critical_paths {
        let entity = format!("critical_path {:?}", rule.id);
        if !rule_ids.insert(&rule.id) {
            push(&entity, "duplicate rule id".into());
        }
        if kb.unit(&rule.source_predicate).is_none() && !kb.has_material(&rule.source_predicate) {
            push(
                &entity,
                format!(
                    "source_predicate {:?} names neither a unit nor a material",
                    rule.source_predicate
                ),
            );
        }
        if kb.unit(&rule.target_unit).is_none() {
            push(&entity, format!("target_unit {:?} is not a unit", rule.target_unit));
        }
    }

    out
}
