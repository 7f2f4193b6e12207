//! Rationale-augmented training-data factory.
//!
//! Each (intent, units) pair is distilled into a triplet (intent,
//! rationale, units) by a teacher generator, then pushed through a
//! four-check validation loop:
//!
//! 1. topological feasibility — a compatible, connected edge set over
//!    the units exists (decided constructively via the heuristic
//!    proposer plus the repair loop),
//! 2. unit configuration alignment — every unit appears in some motif
//!    compatible with the intent's archetype,
//! 3. semantic-unit consistency — every unit the rationale mentions is
//!    in the unit list,
//! 4. engineering mechanism review — all declarative predicates hold
//!    (e.g. hydrogen balance).
//!
//! Failing triplets are re-prompted with the failure detail until they
//! pass or the attempt budget runs out. A fraction of accepted positives
//! is then perturbed into negatives by removing a critical supporting
//! unit, for error-detection training.

use std::collections::BTreeSet;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapter::{AdapterError, GenerationRequest, Generator};
use crate::kb::{
    predicate_holds, units_mentioned, DesignIntent, IoRuleKind, KnowledgeBase,
    MechanismPredicate,
};
use crate::metrics::UnitSelection;
use crate::rng::SplitMix64;
use crate::synth::{synthesize, Proposer, SynthConfig};

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("teacher returned an empty rationale")]
    EmptyResponse,
    #[error(transparent)]
    Adapter(#[from] AdapterError),
    #[error("unit {0:?} is not in the knowledge base")]
    UnresolvedUnit(String),
    #[error("no perturbable unit: every removal keeps all checks passing")]
    NoPerturbableUnit,
    #[error("triplet is not accepted: {0}")]
    NotAccepted(String),
    #[error("dataset parse error: {0}")]
    Parse(String),
}

/// Positive samples are validated designs; negative samples carry an
/// intentional defect for error-detection training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Positive,
    Negative,
}

/// Outcome of one validation check.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckResult {
    pub passed: bool,
    #[serde(default)]
    pub detail: String,
}

impl CheckResult {
    fn pass() -> Self {
        Self {
            passed: true,
            detail: String::new(),
        }
    }

    fn fail(detail: String) -> Self {
        Self {
            passed: false,
            detail,
        }
    }
}

/// Results of the four validation checks plus the attempt count of the
/// refinement loop that produced them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub topological_feasibility: CheckResult,
    pub unit_configuration_alignment: CheckResult,
    pub semantic_unit_consistency: CheckResult,
    pub engineering_mechanism_review: CheckResult,
    pub attempts: usize,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.topological_feasibility.passed
            && self.unit_configuration_alignment.passed
            && self.semantic_unit_consistency.passed
            && self.engineering_mechanism_review.passed
    }

    pub fn checks(&self) -> [(&'static str, &CheckResult); 4] {
        [
            ("topological_feasibility", &self.topological_feasibility),
            ("unit_configuration_alignment", &self.unit_configuration_alignment),
            ("semantic_unit_consistency", &self.semantic_unit_consistency),
            ("engineering_mechanism_review", &self.engineering_mechanism_review),
        ]
    }

    fn first_failure(&self) -> Option<(&'static str, &CheckResult)> {
        self.checks().into_iter().find(|(_, c)| !c.passed)
    }
}

/// One training triplet: intent, rationale, unit selection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftTriplet {
    pub intent: DesignIntent,
    pub rationale: String,
    pub units: UnitSelection,
    pub polarity: Polarity,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub defect: Option<String>,
    pub validation: ValidationReport,
}

impl SftTriplet {
    /// A positive is accepted when all four checks pass; a negative is
    /// accepted when it carries its intended defect (its validation
    /// intentionally fails).
    pub fn accepted(&self) -> bool {
        match self.polarity {
            Polarity::Positive => self.validation.all_passed(),
            Polarity::Negative => self.defect.is_some(),
        }
    }
}

/// Versioned prompt asking the teacher for a unit-by-unit rationale,
/// with the unit I/O schemas embedded as grounding.
pub fn distill_prompt(
    intent: &DesignIntent,
    units: &UnitSelection,
    kb: &KnowledgeBase,
) -> Result<String, DatagenError> {
    let mut prompt = String::from("[rationale-prompt v1]\n");
    prompt.push_str(&format!("Design intent: {}\n", intent.canonical_json()));
    prompt.push_str(&format!(
        "units: {}\n",
        units.iter().cloned().collect::<Vec<_>>().join(", ")
    ));
    prompt.push_str("Unit I/O schemas:\n");
    for id in units.iter() {
        let spec = kb
            .unit(id)
            .ok_or_else(|| DatagenError::UnresolvedUnit(id.clone()))?;
        let requires: Vec<&str> = spec.rule_materials(IoRuleKind::RequiresInput).collect();
        prompt.push_str(&format!(
            "- {} inputs [{}] outputs [{}]{}\n",
            spec.id,
            spec.inputs.iter().cloned().collect::<Vec<_>>().join(", "),
            spec.outputs.iter().cloned().collect::<Vec<_>>().join(", "),
            if requires.is_empty() {
                String::new()
            } else {
                format!(" requires [{}]", requires.join(", "))
            },
        ));
    }
    prompt.push_str(
        "Explain, unit by unit, why each selected unit is necessary for this design intent. \
         Mention each unit by its canonical id and name the materials it handles. \
         Mention only units from the list above.\n",
    );
    Ok(prompt)
}

/// Re-prompt built from the original prompt plus the first failing
/// check's detail.
pub fn refine_prompt(base_prompt: &str, report: &ValidationReport) -> String {
    let (check, result) = report
        .first_failure()
        .expect("refine_prompt is only called on failing reports");
    format!(
        "{base_prompt}The previous rationale failed validation — {check}: {detail}\n\
         Regenerate the rationale and fix this issue.\n",
        detail = result.detail
    )
}

/// Ask the teacher for a rationale explaining why every unit of V is
/// necessary for the intent. The prompt embeds the unit schemas from the
/// KB; an empty response is an error.
pub fn distill_rationale(
    intent: &DesignIntent,
    units: &UnitSelection,
    kb: &KnowledgeBase,
    teacher: &dyn Generator,
) -> Result<String, DatagenError> {
    let prompt = distill_prompt(intent, units, kb)?;
    let req = GenerationRequest::for_prompt(prompt).tagged("stage", "distill");
    let text = teacher.generate(&req)?;
    if text.trim().is_empty() {
        return Err(DatagenError::EmptyResponse);
    }
    Ok(text)
}

fn check_topological_feasibility(units: &UnitSelection, kb: &KnowledgeBase) -> CheckResult {
    if units.is_empty() {
        return CheckResult::fail("no units selected".into());
    }
    let cfg = SynthConfig::default();
    match synthesize(units, kb, &cfg, &Proposer::Heuristic, None) {
        Ok((graph, trace)) => {
            let isolated = graph.isolated_nodes();
            if !trace.converged {
                CheckResult::fail("no compatible edge set reaches convergence".into())
            } else if !isolated.is_empty() {
                CheckResult::fail(format!(
                    "units left unconnected: {}",
                    isolated.join(", ")
                ))
            } else {
                CheckResult::pass()
            }
        }
        Err(e) => CheckResult::fail(e.to_string()),
    }
}

fn check_configuration_alignment(
    intent: &DesignIntent,
    units: &UnitSelection,
    kb: &KnowledgeBase,
) -> CheckResult {
    let uncovered: Vec<String> = units
        .iter()
        .filter(|id| {
            !kb.motifs.iter().any(|m| {
                m.unit_ids.iter().any(|u| u == *id)
                    && kb.motif_matches_archetype(m, &intent.archetype)
            })
        })
        .cloned()
        .collect();
    if uncovered.is_empty() {
        CheckResult::pass()
    } else {
        CheckResult::fail(format!(
            "units outside every {}-compatible motif: {}",
            intent.archetype,
            uncovered.join(", ")
        ))
    }
}

fn check_semantic_consistency(
    rationale: &str,
    units: &UnitSelection,
    kb: &KnowledgeBase,
) -> CheckResult {
    let mentioned = units_mentioned(rationale, kb);
    let offenders: Vec<String> = mentioned
        .into_iter()
        .filter(|id| !units.contains(id))
        .collect();
    if offenders.is_empty() {
        CheckResult::pass()
    } else {
        CheckResult::fail(format!(
            "rationale mentions units outside the selection: {}",
            offenders.join(", ")
        ))
    }
}

fn check_mechanism_review(
    intent: &DesignIntent,
    units: &UnitSelection,
    kb: &KnowledgeBase,
    predicates: &[MechanismPredicate],
) -> CheckResult {
    let failing: Vec<String> = predicates
        .iter()
        .filter(|p| !predicate_holds(p, intent, units.units(), kb))
        .map(|p| p.id.clone())
        .collect();
    if failing.is_empty() {
        CheckResult::pass()
    } else {
        CheckResult::fail(format!("failing predicates: {}", failing.join(", ")))
    }
}

/// Run the four validation checks. Failures are report content, never
/// errors.
pub fn validate_triplet(
    t: &SftTriplet,
    kb: &KnowledgeBase,
    predicates: &[MechanismPredicate],
) -> ValidationReport {
    ValidationReport {
        topological_feasibility: check_topological_feasibility(&t.units, kb),
        unit_configuration_alignment: check_configuration_alignment(&t.intent, &t.units, kb),
        semantic_unit_consistency: check_semantic_consistency(&t.rationale, &t.units, kb),
        engineering_mechanism_review: check_mechanism_review(&t.intent, &t.units, kb, predicates),
        attempts: 1,
    }
}

/// Validate, and on failure re-prompt the teacher with the failing
/// check's detail, up to `max_attempts` validations. Returns the first
/// fully passing triplet, or the last attempt flagged rejected with
/// `attempts = max_attempts`. Transport errors propagate.
pub fn refine_until_valid(
    t: SftTriplet,
    kb: &KnowledgeBase,
    predicates: &[MechanismPredicate],
    teacher: &dyn Generator,
    max_attempts: usize,
) -> Result<SftTriplet, DatagenError> {
    assert!(max_attempts >= 1, "max_attempts must be at least 1");
    let base_prompt = distill_prompt(&t.intent, &t.units, kb)?;
    let mut current = t;
    for attempt in 1..=max_attempts {
        let mut report = validate_triplet(&current, kb, predicates);
        report.attempts = attempt;
        current.validation = report;
        if current.validation.all_passed() || attempt == max_attempts {
            return Ok(current);
        }
        let prompt = refine_prompt(&base_prompt, &current.validation);
        let req = GenerationRequest::for_prompt(prompt).tagged("stage", "refine");
        let text = teacher.generate(&req)?;
        if text.trim().is_empty() {
            return Err(DatagenError::EmptyResponse);
        }
        current.rationale = text;
    }
    unreachable!("loop returns on the last attempt");
}

/// Whether removing `unit` breaks a mechanism predicate or starves a
/// remaining unit's requires-input rule of its only in-selection emitter.
fn is_sole_satisfier(
    unit: &str,
    intent: &DesignIntent,
    units: &UnitSelection,
    kb: &KnowledgeBase,
    predicates: &[MechanismPredicate],
) -> bool {
    let reduced: BTreeSet<String> = units.iter().filter(|u| *u != unit).cloned().collect();
    if predicates
        .iter()
        .any(|p| !predicate_holds(p, intent, &reduced, kb))
    {
        return true;
    }
    // Some remaining consumer's required material loses its last emitter.
    reduced.iter().any(|id| {
        kb.unit(id).is_some_and(|spec| {
            spec.rule_materials(IoRuleKind::RequiresInput).any(|m| {
                let emitter_remains = reduced
                    .iter()
                    .any(|other| kb.unit(other).is_some_and(|u| u.outputs.contains(m)));
                let emitter_before = units
                    .iter()
                    .any(|other| kb.unit(other).is_some_and(|u| u.outputs.contains(m)));
                emitter_before && !emitter_remains
            })
        })
    })
}

const DEFECT_MISSING_SUPPORT_UNIT: &str = "missing_support_unit";

/// Perturb an accepted positive into a negative by removing one
/// supporting unit, chosen deterministically from the seed and
/// preferring sole satisfiers of a predicate or requires-input rule. The
/// removed unit is named in an appended defect note, so the negative
/// fails at least the semantic-unit check on re-validation.
pub fn perturb_negative(
    t: &SftTriplet,
    kb: &KnowledgeBase,
    predicates: &[MechanismPredicate],
    seed: u64,
) -> Result<SftTriplet, DatagenError> {
    if t.polarity != Polarity::Positive || !t.accepted() {
        return Err(DatagenError::NotAccepted(
            "perturbation requires an accepted positive".into(),
        ));
    }
    // Candidates: units whose removal (rationale unchanged) fails at
    // least one check. Removals that would empty V are not considered.
    let mut perturbable = Vec::new();
    if t.units.len() > 1 {
        for unit in t.units.iter() {
            let reduced =
                UnitSelection::from_canonical(t.units.iter().filter(|u| *u != unit).cloned());
            let candidate = SftTriplet {
                units: reduced,
                ..t.clone()
            };
            if !validate_triplet(&candidate, kb, predicates).all_passed() {
                perturbable.push(unit.clone());
            }
        }
    }
    if perturbable.is_empty() {
        return Err(DatagenError::NoPerturbableUnit);
    }
    let preferred: Vec<String> = perturbable
        .iter()
        .filter(|u| is_sole_satisfier(u, &t.intent, &t.units, kb, predicates))
        .cloned()
        .collect();
    let pool = if preferred.is_empty() { &perturbable } else { &preferred };
    let index = SplitMix64::new(seed).next_below(pool.len() as u64) as usize;
    let removed = pool[index].clone();

    let units = UnitSelection::from_canonical(t.units.iter().filter(|u| **u != removed).cloned());
    let rationale = format!(
        "{}\n\nDefect identified ({DEFECT_MISSING_SUPPORT_UNIT}): supporting unit {removed} is \
         absent from the selection. Corrective measures: reinstate {removed} so the \
         configuration closes its material balance.",
        t.rationale
    );
    let mut negative = SftTriplet {
        intent: t.intent.clone(),
        rationale,
        units,
        polarity: Polarity::Negative,
        defect: Some(DEFECT_MISSING_SUPPORT_UNIT.to_string()),
        validation: t.validation.clone(),
    };
    let mut report = validate_triplet(&negative, kb, predicates);
    report.attempts = 1;
    debug_assert!(!report.all_passed(), "a negative must fail at least one check");
    negative.validation = report;
    Ok(negative)
}

/// Dataset factory configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub negative_fraction: f64,
    pub seed: u64,
    pub max_attempts: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            negative_fraction: 0.10,
            seed: 0,
            max_attempts: 3,
        }
    }
}

/// Factory counters: acceptance, per-check failure counts over final
/// validations, and the attempts histogram.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub pairs: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub positives: usize,
    pub negatives: usize,
    pub check_failures: BTreeMap<String, usize>,
    pub attempts_histogram: BTreeMap<usize, usize>,
    pub item_errors: Vec<String>,
}

/// Distill, validate, and refine every pair, then convert
/// `round(negative_fraction × accepted)` accepted positives into
/// negatives, selected deterministically from the seed. Per-item errors
/// are collected in the stats; the dataset is still emitted for the
/// successes.
pub fn build_sft_dataset(
    pairs: &[(DesignIntent, UnitSelection)],
    kb: &KnowledgeBase,
    predicates: &[MechanismPredicate],
    teacher: &dyn Generator,
    cfg: &DatasetConfig,
) -> (Vec<SftTriplet>, DatasetStats) {
    let mut stats = DatasetStats {
        pairs: pairs.len(),
        ..DatasetStats::default()
    };
    let mut dataset = Vec::new();
    for (index, (intent, units)) in pairs.iter().enumerate() {
        let rationale = match distill_rationale(intent, units, kb, teacher) {
            Ok(text) => text,
            Err(e) => {
                stats.item_errors.push(format!("pair {index}: {e}"));
                continue;
            }
        };
        let triplet = SftTriplet {
            intent: intent.clone(),
            rationale,
            units: units.clone(),
            polarity: Polarity::Positive,
            defect: None,
            validation: ValidationReport {
                topological_feasibility: CheckResult::pass(),
                unit_configuration_alignment: CheckResult::pass(),
                semantic_unit_consistency: CheckResult::pass(),
                engineering_mechanism_review: CheckResult::pass(),
                attempts: 0,
            },
        };
        let refined = match refine_until_valid(triplet, kb, predicates, teacher, cfg.max_attempts)
        {
            Ok(t) => t,
            Err(e) => {
                stats.item_errors.push(format!("pair {index}: {e}"));
                continue;
            }
        };
        *stats
            .attempts_histogram
            .entry(refined.validation.attempts)
            .or_insert(0) += 1;
        for (name, check) in refined.validation.checks() {
            if !check.passed {
                *stats.check_failures.entry(name.to_string()).or_insert(0) += 1;
            }
        }
        if refined.validation.all_passed() {
            stats.accepted += 1;
            dataset.push(refined);
        } else {
            stats.rejected += 1;
        }
    }

    let target_negatives = (cfg.negative_fraction * stats.accepted as f64).round() as usize;
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    SplitMix64::new(cfg.seed).shuffle(&mut order);
    let mut made = 0usize;
    for idx in order {
        if made == target_negatives {
            break;
        }
        let item_seed = cfg.seed.wrapping_add(idx as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        match perturb_negative(&dataset[idx], kb, predicates, item_seed) {
            Ok(negative) => {
                dataset[idx] = negative;
                made += 1;
            }
            Err(DatagenError::NoPerturbableUnit) => continue,
            Err(e) => stats.item_errors.push(format!("perturb {idx}: {e}")),
        }
    }
    if made < target_negatives {
        stats.item_errors.push(format!(
            "only {made} of {target_negatives} requested negatives were perturbable"
        ));
    }
    stats.negatives = made;
    stats.positives = dataset.len() - made;
    (dataset, stats)
}

/// Escape applied to the rationale section of a training record: the
/// literal closing tag can never appear unescaped inside it.
fn escape_rationale(text: &str) -> String {
    text.replace('\\', "\\\\").replace("</thinking>", "<\\/thinking>")
}

/// Render one accepted triplet as a training record: the intent line,
/// the rationale wrapped in `<thinking>` tags, then the unit list in
/// canonical serialized form.
pub fn emit_training_record(t: &SftTriplet) -> Result<String, DatagenError> {
    if !t.accepted() {
        return Err(DatagenError::NotAccepted(
            "only accepted triplets are emitted".into(),
        ));
    }
    let units_json =
        serde_json::to_string(&t.units).expect("unit selection serialization cannot fail");
    Ok(format!(
        "intent: {}\n<thinking>\n{}\n</thinking>\nunits: {}\n",
        t.intent.canonical_json(),
        escape_rationale(&t.rationale),
        units_json
    ))
}

/// Serialize a dataset as JSON lines.
pub fn write_dataset_jsonl(dataset: &[SftTriplet]) -> String {
    let mut out = String::new();
    for t in dataset {
        out.push_str(&serde_json::to_string(t).expect("triplet serialization cannot fail"));
        out.push('\n');
    }
    out
}

/// Parse a JSON-lines dataset.
pub fn parse_dataset_jsonl(text: &str) -> Result<Vec<SftTriplet>, DatagenError> {
    text.lines()
        .filter(|line| !line.trim().is_empty())
        .enumerate()
        .map(|(number, line)| {
            serde_json::from_str(line)
                .map_err(|e| DatagenError::Parse(format!("line {}: {e}", number + 1)))
        })
        .collect()
}

/// One entry of the input pairs file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IntentPair {
    pub intent: DesignIntent,
    pub units: Vec<String>,
}

/// Parse the pairs file, validating intents and resolving unit names
/// against the KB.
pub fn parse_pairs(text: &str, kb: &KnowledgeBase) -> Result<Vec<(DesignIntent, UnitSelection)>, DatagenError> {
    let raw: Vec<IntentPair> =
        serde_json::from_str(text).map_err(|e| DatagenError::Parse(e.to_string()))?;
    raw.into_iter()
        .enumerate()
        .map(|(index, pair)| {
            if let Some(violation) = kb.check_intent(&pair.intent).first() {
                return Err(DatagenError::Parse(format!("pair {index}: {violation}")));
            }
            let units = UnitSelection::resolve(pair.units.iter().map(String::as_str), kb)
                .map_err(|e| DatagenError::Parse(e.to_string()))?;
            Ok((pair.intent, units))
        })
        .collect()
}

/// Deterministic offline teacher: reads the unit list out of the prompt
/// and writes a grounded, unit-by-unit rationale from the KB schemas. A
/// stand-in for a remote teacher in tests, demos, and synthetic runs.
pub struct TemplateTeacher {
    kb: KnowledgeBase,
}

impl TemplateTeacher {
    pub fn new(kb: KnowledgeBase) -> Self {
        Self { kb }
    }
}

impl Generator for TemplateTeacher {
    fn generate(&self, req: &GenerationRequest) -> Result<String, AdapterError> {
        let units_line = req
            .prompt
            .lines()
            .find_map(|line| line.strip_prefix("units: "))
            .ok_or_else(|| {
                AdapterError::MalformedResponse("prompt has no `units:` line to template from".into())
            })?;
        let ids: Vec<&str> = units_line
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .collect();
        let mut text = String::from(
            "This configuration covers the design intent as follows.",
        );
        for id in &ids {
            let Some(spec) = self.kb.unit(id) else {
                continue;
            };
            let inputs: Vec<&str> = spec.inputs.iter().map(String::as_str).collect();
            let outputs: Vec<&str> = spec.outputs.iter().map(String::as_str).collect();
            text.push_str(&format!(
                " The {} unit is required: it takes {} and produces {}.",
                spec.id,
                inputs.join(" and "),
                outputs.join(" and "),
            ));
            for material in spec.rule_materials(IoRuleKind::RequiresInput) {
                let emitter = ids
                    .iter()
                    .find(|other| {
                        self.kb
                            .unit(other)
                            .is_some_and(|u| u.outputs.contains(material))
                    })
                    .copied();
                match emitter {
                    Some(source) if source != *id => text.push_str(&format!(
                        " Its {material} feed is supplied by the {source} unit.",
                    )),
                    _ => text.push_str(&format!(" It depends on a steady {material} feed.")),
                }
            }
        }
        Ok(text)
    }
}
