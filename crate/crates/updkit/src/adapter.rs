//! Generator and judge boundary.
//!
//! Remote text generators (a teacher for rationale distillation, a
//! proposer for topology synthesis) sit behind one minimal wire
//! protocol: JSON POST `{prompt, temperature, top_p, top_k, max_tokens}`
//! answered by `{text}`. Vendor-specific APIs adapt via thin shims.
//!
//! Offline work uses [`MockGenerator`], a deterministic table keyed by a
//! stable fingerprint of the canonicalized prompt.
//!
//! [`judge_justification`] is the rule-based stand-in for expert
//! judgment of rationales. Scores produced with it are labeled
//! `judge = rule` in reports and are not comparable to expert-judged
//! numbers.

use std::collections::BTreeMap;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kb::{
    materials_mentioned, mentions_token, normalize_name, units_mentioned, IoRuleKind, KbError,
    KnowledgeBase, MechanismPredicate, PredicateCheck,
};
use crate::metrics::{Judge, JustificationJudgment};

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error("request to {endpoint} failed after {attempts} attempt(s): {detail}")]
    Transport {
        endpoint: String,
        attempts: u32,
        detail: String,
    },
    #[error("{endpoint} answered HTTP {status}: {body_excerpt}")]
    Protocol {
        endpoint: String,
        status: u16,
        body_excerpt: String,
    },
    #[error("malformed generator response: {0}")]
    MalformedResponse(String),
    #[error("no mock entry for prompt fingerprint {fingerprint:#018x} and no default")]
    NoEntry { fingerprint: u64 },
    #[error(transparent)]
    Kb(#[from] KbError),
}

/// One generation request. Decoding defaults follow the evaluation
/// setup: temperature 0.3, top-p 0.95, top-k 5.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub temperature: f64,
    pub top_p: f64,
    pub top_k: u32,
    pub max_tokens: u32,
    /// Local metadata (task id, stage); not part of the wire protocol.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub tags: BTreeMap<String, String>,
}

impl Default for GenerationRequest {
    fn default() -> Self {
        Self {
            prompt: String::new(),
            temperature: 0.3,
            top_p: 0.95,
            top_k: 5,
            max_tokens: 1024,
            tags: BTreeMap::new(),
        }
    }
}

impl GenerationRequest {
    pub fn for_prompt(prompt: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            ..Self::default()
        }
    }

    pub fn tagged(mut self, key: &str, value: &str) -> Self {
        self.tags.insert(key.to_string(), value.to_string());
        self
    }
}

/// Connection settings for a remote generator endpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub endpoint: String,
    /// Name of the environment variable holding the bearer token, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_env: Option<String>,
    pub timeout_secs: u64,
    pub retries: u32,
    pub max_in_flight: usize,
}

impl GeneratorConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            auth_env: None,
            timeout_secs: 60,
            retries: 3,
            max_in_flight: 4,
        }
    }
}

/// Anything that can answer a generation request: a remote endpoint, a
/// mock table, or a deterministic local baseline.
pub trait Generator: Send + Sync {
    fn generate(&self, req: &GenerationRequest) -> Result<String, AdapterError>;
}

/// Stable 64-bit FNV-1a hash; identical across runs and platforms.
pub fn fnv1a_64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Fingerprint of a prompt after canonicalization (whitespace runs
/// collapsed, ends trimmed). Case is preserved.
pub fn prompt_fingerprint(prompt: &str) -> u64 {
    let canonical = prompt.split_whitespace().collect::<Vec<_>>().join(" ");
    fnv1a_64(canonical.as_bytes())
}

/// Deterministic prompt-fingerprint → response table with an optional
/// fallback for misses.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MockTable {
    #[serde(default)]
    entries: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    default: Option<String>,
}

impl MockTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_default(response: impl Into<String>) -> Self {
        Self {
            entries: BTreeMap::new(),
            default: Some(response.into()),
        }
    }

    /// Map a full prompt to a canned response.
    pub fn insert_prompt(&mut self, prompt: &str, response: impl Into<String>) {
        self.entries
            .insert(format!("{:#018x}", prompt_fingerprint(prompt)), response.into());
    }

    pub fn set_default(&mut self, response: impl Into<String>) {
        self.default = Some(response.into());
    }

    pub fn lookup(&self, fingerprint: u64) -> Option<&str> {
        self.entries
            .get(&format!("{fingerprint:#018x}"))
            .or(self.default.as_ref())
            .map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Pure table lookup: fingerprint the prompt, return the mapped response
/// or the default; a miss without a default is an error.
pub fn mock_generate(req: &GenerationRequest, table: &MockTable) -> Result<String, AdapterError> {
    let fingerprint = prompt_fingerprint(&req.prompt);
    table
        .lookup(fingerprint)
        .map(str::to_string)
        .ok_or(AdapterError::NoEntry { fingerprint })
}

/// [`Generator`] over a [`MockTable`].
#[derive(Debug, Clone, Default)]
pub struct MockGenerator {
    pub table: MockTable,
}

impl MockGenerator {
    pub fn new(table: MockTable) -> Self {
        Self { table }
    }
}

impl Generator for MockGenerator {
    fn generate(&self, req: &GenerationRequest) -> Result<String, AdapterError> {
        mock_generate(req, &self.table)
    }
}

/// Counting semaphore bounding concurrent outstanding requests.
struct Semaphore {
    permits: Mutex<usize>,
    available: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Self {
        Self {
            permits: Mutex::new(permits),
            available: Condvar::new(),
        }
    }

    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut permits = self.permits.lock().expect("semaphore poisoned");
        while *permits == 0 {
            permits = self.available.wait(permits).expect("semaphore poisoned");
        }
        *permits -= 1;
        SemaphoreGuard { semaphore: self }
    }
}

struct SemaphoreGuard<'a> {
    semaphore: &'a Semaphore,
}

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        let mut permits = self.semaphore.permits.lock().expect("semaphore poisoned");
        *permits += 1;
        self.semaphore.available.notify_one();
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    prompt: &'a str,
    temperature: f64,
    top_p: f64,
    top_k: u32,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct WireResponse {
    text: String,
}

/// Remote generator client: bounded concurrency, bearer auth from the
/// configured environment variable, and retry with exponential backoff
/// on transport errors and 5xx answers.
pub struct RemoteGenerator {
    config: GeneratorConfig,
    agent: ureq::Agent,
    gate: Semaphore,
    log_exchanges: bool,
}

impl RemoteGenerator {
    pub fn new(config: GeneratorConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        let gate = Semaphore::new(config.max_in_flight.max(1));
        Self {
            config,
            agent,
            gate,
            log_exchanges: false,
        }
    }

    /// Dump request/response pairs as JSON lines on stderr.
    pub fn with_exchange_logging(mut self, enabled: bool) -> Self {
        self.log_exchanges = enabled;
        self
    }

    fn bearer_token(&self) -> Option<String> {
        self.config
            .auth_env
            .as_ref()
            .and_then(|var| std::env::var(var).ok())
            .filter(|token| !token.is_empty())
    }

    fn log(&self, event: &str, payload: serde_json::Value) {
        if self.log_exchanges {
            let line = serde_json::json!({ "event": event, "payload": payload });
            eprintln!("{line}");
        }
    }

    fn attempt(&self, req: &GenerationRequest) -> Result<String, AttemptOutcome> {
        let body = WireRequest {
            prompt: &req.prompt,
            temperature: req.temperature,
            top_p: req.top_p,
            top_k: req.top_k,
            max_tokens: req.max_tokens,
        };
        let mut request = self.agent.post(&self.config.endpoint);
        if let Some(token) = self.bearer_token() {
            request = request.header("authorization", &format!("Bearer {token}"));
        }
        let mut response = request
            .send_json(&body)
            .map_err(|e| AttemptOutcome::Retryable(e.to_string()))?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| AttemptOutcome::Retryable(format!("reading body: {e}")))?;
        if (500..600).contains(&status) {
            return Err(AttemptOutcome::Retryable(format!("HTTP {status}")));
        }
        if !(200..300).contains(&status) {
            return Err(AttemptOutcome::Fatal(AdapterError::Protocol {
                endpoint: self.config.endpoint.clone(),
                status,
                body_excerpt: excerpt(&text),
            }));
        }
        let parsed: WireResponse = serde_json::from_str(&text).map_err(|e| {
            AttemptOutcome::Fatal(AdapterError::MalformedResponse(format!(
                "{e} in body {:?}",
                excerpt(&text)
            )))
        })?;
        Ok(parsed.text)
    }
}

enum AttemptOutcome {
    Retryable(String),
    Fatal(AdapterError),
}

fn excerpt(body: &str) -> String {
    const LIMIT: usize = 200;
    if body.len() <= LIMIT {
        body.to_string()
    } else {
        let mut cut = LIMIT;
        while !body.is_char_boundary(cut) {
            cut -= 1;
        }
        format!("{}…", &body[..cut])
    }
}

impl Generator for RemoteGenerator {
    fn generate(&self, req: &GenerationRequest) -> Result<String, AdapterError> {
        let _permit = self.gate.acquire();
        self.log(
            "request",
            serde_json::json!({ "endpoint": self.config.endpoint, "prompt": req.prompt,
                                "tags": req.tags }),
        );
        let mut last_detail = String::new();
        for attempt in 0..=self.config.retries {
            if attempt > 0 {
                let backoff = Duration::from_millis(50u64.saturating_mul(1 << attempt.min(6)));
                std::thread::sleep(backoff);
            }
            match self.attempt(req) {
                Ok(text) => {
                    self.log("response", serde_json::json!({ "text": text }));
                    return Ok(text);
                }
                Err(AttemptOutcome::Fatal(err)) => {
                    self.log("error", serde_json::json!({ "detail": err.to_string() }));
                    return Err(err);
                }
                Err(AttemptOutcome::Retryable(detail)) => last_detail = detail,
            }
        }
        let err = AdapterError::Transport {
            endpoint: self.config.endpoint.clone(),
            attempts: self.config.retries + 1,
            detail: last_detail,
        };
        self.log("error", serde_json::json!({ "detail": err.to_string() }));
        Err(err)
    }
}

/// One-shot remote call; constructs a throwaway client. Long-lived
/// callers should hold a [`RemoteGenerator`] so the concurrency bound
/// spans requests.
pub fn generate(req: &GenerationRequest, cfg: &GeneratorConfig) -> Result<String, AdapterError> {
    RemoteGenerator::new(cfg.clone()).generate(req)
}

/// Rule-based justification judge, a deterministic proxy for expert
/// review. A rationale is judged valid for a unit when it
///
/// 1. mentions the unit (token-boundary match on id, display name, or
///    alias),
/// 2. mentions at least one material from the unit's input or output
///    sets, and
/// 3. contradicts no mechanism predicate: when a
///    requires-producer predicate names a material the unit itself
///    requires as input, the rationale must mention that material or a
///    unit that emits it.
pub fn judge_justification(
    unit_id: &str,
    rationale: &str,
    kb: &KnowledgeBase,
    predicates: &[MechanismPredicate],
) -> Result<JustificationJudgment, AdapterError> {
    let canonical = crate::kb::canonicalize_unit_name(unit_id, kb)?;
    let unit = kb.unit(&canonical).expect("canonical id resolves");
    let norm = normalize_name(rationale);

    let mentioned = mentions_token(&norm, &unit.id)
        || unit
            .aliases
            .iter()
            .any(|a| mentions_token(&norm, &normalize_name(a)))
        || (!unit.display_name.is_empty()
            && mentions_token(&norm, &normalize_name(&unit.display_name)));
    if !mentioned {
        return Ok(JustificationJudgment {
            unit: canonical,
            valid: false,
            judge: Judge::Rule,
            note: "rationale never mentions the unit".into(),
        });
    }

    let materials = materials_mentioned(rationale, kb);
    let io_mentioned = materials
        .iter()
        .any(|m| unit.inputs.contains(m) || unit.outputs.contains(m));
    if !io_mentioned {
        return Ok(JustificationJudgment {
            unit: canonical,
            valid: false,
            judge: Judge::Rule,
            note: "rationale mentions none of the unit's input or output materials".into(),
        });
    }

    let units_in_text = units_mentioned(rationale, kb);
    for predicate in predicates {
        if let PredicateCheck::RequiresProducerWhenConsumer { material } = &predicate.check {
            let unit_requires = unit
                .rule_materials(IoRuleKind::RequiresInput)
                .any(|m| m == material);
            if !unit_requires {
                continue;
            }
            let material_named = materials.contains(material);
            let producer_named = units_in_text
                .iter()
                .any(|id| kb.unit(id).is_some_and(|u| u.outputs.contains(material)));
            if !material_named && !producer_named {
                return Ok(JustificationJudgment {
                    unit: canonical,
                    valid: false,
                    judge: Judge::Rule,
                    note: format!(
                        "predicate {:?}: rationale names neither {material:?} nor a unit emitting it",
                        predicate.id
                    ),
                });
            }
        }
    }

    Ok(JustificationJudgment {
        unit: canonical,
        valid: true,
        judge: Judge::Rule,
        note: String::new(),
    })
}
