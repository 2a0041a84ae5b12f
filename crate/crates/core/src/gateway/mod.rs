//! The single choke-point for LLM judgments, rankings, generations and
//! embeddings.
//!
//! [`Gateway`] renders a versioned template, sends it to a [`Backend`]
//! (the HTTP provider or the seeded [`MockBackend`]), retries transport
//! failures with exponential backoff, parses the structured reply leniently,
//! re-asks once when it cannot, and prices every call into a [`CostLedger`].

pub mod ledger;
pub mod mock;
pub mod provider;
pub mod templates;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::sync::{Arc, Condvar, Mutex, PoisonError};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub use ledger::{CostLedger, CostLedgerEntry, CostReport, Pricing, Stage, StageTotals, UnitPrices};
pub use mock::{MockBackend, MockRules};
pub use provider::{ProviderBackend, ProviderConfig};
pub use templates::{ids, ModelRole, Payload, Template, TemplateRegistry};

use crate::corpus::count_tokens;
use crate::text::sha256_hex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub outcome: Outcome,
    pub rationale: String,
    pub criterion_id: String,
    /// Set when the verdict is a conservative Fail caused by a gateway error
    /// rather than by the judge.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub by_error: bool,
}

impl Verdict {
    pub fn passed(&self) -> bool {
        self.outcome == Outcome::Pass
    }

    pub fn fail_by_error(criterion_id: &str, err: &GatewayError) -> Self {
        Self {
            outcome: Outcome::Fail,
            rationale: format!("gateway error: {err}"),
            criterion_id: criterion_id.to_string(),
            by_error: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionRanking {
    pub criterion_id: String,
    /// Candidate ids, best first.
    pub order: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_scores: Option<BTreeMap<String, f64>>,
}

impl CriterionRanking {
    /// 1-based rank of every candidate.
    pub fn ranks(&self) -> HashMap<&str, usize> {
        self.order.iter().enumerate().map(|(i, id)| (id.as_str(), i + 1)).collect()
    }
}

/// A ranking plus the number of repairs applied to the model's output.
#[derive(Debug, Clone, PartialEq)]
pub struct RankOutcome {
    pub ranking: CriterionRanking,
    pub repairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub model_id: String,
}

impl EmbeddingVector {
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        cosine(&self.values, &other.values)
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na * nb)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransportKind {
    Timeout,
    RateLimited,
    Server(u16),
    Client(u16),
    Connection(String),
    Credentials(String),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{kind:?}: {message}")]
pub struct TransportError {
    pub kind: TransportKind,
    pub message: String,
}

impl TransportError {
    pub fn new(kind: TransportKind, message: impl Into<String>) -> Self {
        Self { kind, message: message.into() }
    }

    pub fn retryable(&self) -> bool {
        matches!(
            self.kind,
            TransportKind::Timeout | TransportKind::RateLimited | TransportKind::Server(_) | TransportKind::Connection(_)
        )
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("unknown template {0:?}")]
    UnknownTemplate(String),
    #[error("template {template}: payload slots {got:?} do not match declared {expected:?}")]
    SlotMismatch { template: String, expected: Vec<String>, got: Vec<String> },
    #[error("template {template}: transport failed after {attempts} attempt(s): {source}")]
    Transport {
        template: String,
        attempts: u32,
        #[source]
        source: TransportError,
    },
    #[error("template {template}: unparseable model output ({reason})")]
    Parse { template: String, reason: String, transcript: Vec<String> },
    #[error("embedding model {model}: dimension {got} does not match earlier {expected}")]
    DimensionMismatch { model: String, expected: usize, got: usize },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("gateway configuration: {0}")]
    Config(String),
}

impl GatewayError {
    pub fn is_provider_failure(&self) -> bool {
        matches!(self, GatewayError::Transport { .. } | GatewayError::Parse { .. })
    }
}

/// What a backend receives for one completion call.
#[derive(Debug, Clone)]
pub struct CompletionRequest<'a> {
    pub template: &'a Template,
    pub payload: &'a Payload,
    pub prompt: String,
    pub model_id: &'a str,
    pub seed: u64,
    /// 0 for the first ask, 1 for the re-ask after a malformed reply.
    pub reask: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    pub vectors: Vec<Vec<f64>>,
    pub prompt_tokens: u64,
}

pub trait Backend: Send + Sync {
    fn name(&self) -> &str;

    fn complete(&self, request: &CompletionRequest<'_>) -> Result<Completion, TransportError>;

    fn embed(&self, texts: &[String], model_id: &str, seed: u64) -> Result<EmbeddingBatch, TransportError>;
}

impl<B: Backend + ?Sized> Backend for std::sync::Arc<B> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn complete(&self, request: &CompletionRequest<'_>) -> Result<Completion, TransportError> {
        (**self).complete(request)
    }

    fn embed(&self, texts: &[String], model_id: &str, seed: u64) -> Result<EmbeddingBatch, TransportError> {
        (**self).embed(texts, model_id, seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { attempts: 3, base_delay_ms: 500, max_delay_ms: 8_000 }
    }
}

impl RetryPolicy {
    pub fn delay(&self, attempt: u32) -> Duration {
        let ms = self.base_delay_ms.saturating_mul(1u64 << attempt.min(20)).min(self.max_delay_ms);
        Duration::from_millis(ms)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelIds {
    pub judge: String,
    pub generator: String,
    pub answerer: String,
    pub embedding: String,
}

impl Default for ModelIds {
    fn default() -> Self {
        Self {
            judge: "gpt-5-nano".into(),
            generator: "gpt-5".into(),
            answerer: "gpt-5-mini".into(),
            embedding: "text-embedding-3-large".into(),
        }
    }
}

impl ModelIds {
    pub fn for_role(&self, role: ModelRole) -> &str {
        match role {
            ModelRole::Judge => &self.judge,
            ModelRole::Generator => &self.generator,
            ModelRole::Answerer => &self.answerer,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub template_id: String,
    pub template_version: u32,
    pub model_id: String,
    pub payload_digest: String,
    pub reask: u32,
    pub prompt: String,
    pub response: String,
}

struct InFlight {
    limit: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

impl InFlight {
    fn acquire(&self) -> InFlightGuard<'_> {
        let mut active = self.active.lock().unwrap_or_else(PoisonError::into_inner);
        while *active >= self.limit {
            active = self.freed.wait(active).unwrap_or_else(PoisonError::into_inner);
        }
        *active += 1;
        InFlightGuard(self)
    }
}

struct InFlightGuard<'a>(&'a InFlight);

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        *self.0.active.lock().unwrap_or_else(PoisonError::into_inner) -= 1;
        self.0.freed.notify_one();
    }
}

pub struct GatewayBuilder {
    backend: Box<dyn Backend>,
    registry: TemplateRegistry,
    models: ModelIds,
    pricing: Pricing,
    retry: RetryPolicy,
    max_in_flight: usize,
    seed: u64,
    log_transcripts: bool,
}

impl GatewayBuilder {
    pub fn registry(mut self, registry: TemplateRegistry) -> Self {
        self.registry = registry;
        self
    }

    pub fn models(mut self, models: ModelIds) -> Self {
        self.models = models;
        self
    }

    pub fn pricing(mut self, pricing: Pricing) -> Self {
        self.pricing = pricing;
        self
    }

    pub fn retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn max_in_flight(mut self, n: usize) -> Self {
        self.max_in_flight = n.max(1);
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn log_transcripts(mut self, on: bool) -> Self {
        self.log_transcripts = on;
        self
    }

    pub fn build(self) -> Gateway {
        Gateway {
            backend: Arc::from(self.backend),
            registry: self.registry,
            models: self.models,
            ledger: Arc::new(CostLedger::new(self.pricing)),
            retry: self.retry,
            in_flight: Arc::new(InFlight { limit: self.max_in_flight, active: Mutex::new(0), freed: Condvar::new() }),
            seed: self.seed,
            dims: Arc::default(),
            transcripts: self.log_transcripts.then(Arc::default),
            warnings: Arc::default(),
        }
    }
}

pub struct Gateway {
    backend: Arc<dyn Backend>,
    registry: TemplateRegistry,
    models: ModelIds,
    ledger: Arc<CostLedger>,
    retry: RetryPolicy,
    in_flight: Arc<InFlight>,
    seed: u64,
    dims: Arc<Mutex<HashMap<String, usize>>>,
    transcripts: Option<Arc<Mutex<Vec<Transcript>>>>,
    warnings: Arc<Mutex<Vec<String>>>,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("backend", &self.backend.name())
            .field("seed", &self.seed)
            .field("max_in_flight", &self.in_flight.limit)
            .finish_non_exhaustive()
    }
}

impl Gateway {
    pub fn builder(backend: Box<dyn Backend>) -> GatewayBuilder {
        GatewayBuilder {
            backend,
            registry: TemplateRegistry::builtin(),
            models: ModelIds::default(),
            pricing: Pricing::default(),
            retry: RetryPolicy::default(),
            max_in_flight: 8,
            seed: 42,
            log_transcripts: false,
        }
    }

    /// A gateway over the mock backend with default rules.
    pub fn mock(seed: u64) -> Self {
        Self::builder(Box::new(MockBackend::new(MockRules::default()))).seed(seed).build()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// A gateway sharing this one's backend, ledger, in-flight bound and
    /// logs, but passing a different seed to the backend.
    pub fn reseeded(&self, seed: u64) -> Gateway {
        Gateway {
            backend: Arc::clone(&self.backend),
            registry: self.registry.clone(),
            models: self.models.clone(),
            ledger: Arc::clone(&self.ledger),
            retry: self.retry,
            in_flight: Arc::clone(&self.in_flight),
            seed,
            dims: Arc::clone(&self.dims),
            transcripts: self.transcripts.clone(),
            warnings: Arc::clone(&self.warnings),
        }
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    pub fn models(&self) -> &ModelIds {
        &self.models
    }

    pub fn registry(&self) -> &TemplateRegistry {
        &self.registry
    }

    pub fn ledger(&self) -> &CostLedger {
        &self.ledger
    }

    pub fn cost_report(&self) -> CostReport {
        self.ledger.report()
    }

    pub fn warnings(&self) -> Vec<String> {
        self.warnings.lock().unwrap_or_else(PoisonError::into_inner).clone()
    }

    fn warn(&self, msg: String) {
        tracing::warn!("{msg}");
        self.warnings.lock().unwrap_or_else(PoisonError::into_inner).push(msg);
    }

    /// Logged transcripts in a canonical order (independent of call timing).
    pub fn transcripts(&self) -> Vec<Transcript> {
        let Some(t) = &self.transcripts else { return Vec::new() };
        let mut out = t.lock().unwrap_or_else(PoisonError::into_inner).clone();
        out.sort_by(|a, b| {
            (&a.template_id, &a.payload_digest, a.reask, &a.prompt).cmp(&(&b.template_id, &b.payload_digest, b.reask, &b.prompt))
        });
        out
    }

    fn with_retries<T>(&self, template: &str, mut call: impl FnMut() -> Result<T, TransportError>) -> Result<T, GatewayError> {
        let attempts = self.retry.attempts.max(1);
        let mut last = None;
        for attempt in 0..attempts {
            let result = {
                let _slot = self.in_flight.acquire();
                call()
            };
            match result {
                Ok(v) => return Ok(v),
                Err(e) if e.retryable() && attempt + 1 < attempts => {
                    tracing::debug!(template, attempt, error = %e, "retrying");
                    std::thread::sleep(self.retry.delay(attempt));
                    last = Some(e);
                }
                Err(e) => {
                    return Err(GatewayError::Transport { template: template.to_string(), attempts: attempt + 1, source: e })
                }
            }
        }
        Err(GatewayError::Transport {
            template: template.to_string(),
            attempts,
            source: last.unwrap_or_else(|| TransportError::new(TransportKind::Connection("no attempt".into()), "")),
        })
    }

    /// Renders, sends and parses one structured call. `parse` validates the
    /// extracted JSON; a failure triggers one re-ask, then a parse error with
    /// both raw replies attached.
    pub fn ask<T>(
        &self,
        template_id: &str,
        payload: &Payload,
        parse: impl Fn(&Value) -> Result<T, String>,
    ) -> Result<T, GatewayError> {
        let template = self.registry.get(template_id)?;
        let base_prompt = template.render(payload)?;
        let model_id = self.models.for_role(template.role).to_string();
        let payload_digest = payload_digest(payload);
        let mut transcript = Vec::new();
        let mut reason = String::new();
        for reask in 0..2u32 {
            let prompt = if reask == 0 {
                base_prompt.clone()
            } else {
                format!("{base_prompt}\n\nYour previous reply could not be used ({reason}). Reply with the JSON object only.")
            };
            let request = CompletionRequest {
                template,
                payload,
                prompt: prompt.clone(),
                model_id: &model_id,
                seed: self.seed,
                reask,
            };
            let completion = self.with_retries(template_id, || self.backend.complete(&request))?;
            self.ledger.record(template.stage, &model_id, completion.prompt_tokens, completion.completion_tokens);
            if let Some(log) = &self.transcripts {
                log.lock().unwrap_or_else(PoisonError::into_inner).push(Transcript {
                    template_id: template.id.clone(),
                    template_version: template.version,
                    model_id: model_id.clone(),
                    payload_digest: payload_digest.clone(),
                    reask,
                    prompt,
                    response: completion.text.clone(),
                });
            }
            transcript.push(completion.text.clone());
            match extract_json(&completion.text).ok_or_else(|| "no JSON value found".to_string()).and_then(|v| parse(&v)) {
                Ok(v) => return Ok(v),
                Err(e) => reason = e,
            }
        }
        Err(GatewayError::Parse { template: template_id.to_string(), reason, transcript })
    }

    /// Binary judgment.
    pub fn judge(&self, template_id: &str, payload: &Payload) -> Result<Verdict, GatewayError> {
        self.ask(template_id, payload, |v| parse_verdict(v, template_id))
    }

    /// Binary judgment that may carry an `answer` field.
    pub fn judge_with_answer(&self, template_id: &str, payload: &Payload) -> Result<(Verdict, Option<String>), GatewayError> {
        self.ask(template_id, payload, |v| {
            let verdict = parse_verdict(v, template_id)?;
            let answer = v
                .get("answer")
                .and_then(Value::as_str)
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::to_string);
            Ok((verdict, answer))
        })
    }

    /// Several named verdicts from one call (`{"<criterion>": {"verdict": ..}}`).
    pub fn judge_multi(&self, template_id: &str, payload: &Payload, criteria: &[&str]) -> Result<Vec<Verdict>, GatewayError> {
        self.ask(template_id, payload, |v| {
            criteria
                .iter()
                .map(|c| {
                    let entry = v.get(*c).ok_or_else(|| format!("missing criterion {c:?}"))?;
                    parse_verdict(entry, c)
                })
                .collect()
        })
    }

    /// A list of verdicts aligned with `n` inputs (`{"verdicts": [...]}`).
    pub fn judge_list(&self, template_id: &str, payload: &Payload, n: usize) -> Result<Vec<Verdict>, GatewayError> {
        self.ask(template_id, payload, |v| {
            let list = v.get("verdicts").and_then(Value::as_array).ok_or("missing \"verdicts\" array")?;
            if list.len() != n {
                return Err(format!("expected {n} verdicts, got {}", list.len()));
            }
            list.iter()
                .map(|item| {
                    let label = item
                        .as_str()
                        .or_else(|| item.get("verdict").and_then(Value::as_str))
                        .ok_or("verdict is not a string")?;
                    Ok(Verdict {
                        outcome: parse_outcome(label)?,
                        rationale: item.get("rationale").and_then(Value::as_str).unwrap_or_default().to_string(),
                        criterion_id: template_id.to_string(),
                        by_error: false,
                    })
                })
                .collect()
        })
    }

    /// Ranks candidates `(id, text)` on one criterion. Candidates are shown to
    /// the model under short labels `C1..Cn`. Duplicated or unknown labels are
    /// dropped and missing ones appended in input order; each repaired
    /// ranking counts as one warning.
    pub fn rank_by_criterion(
        &self,
        template_id: &str,
        criterion_id: &str,
        candidates: &[(String, String)],
    ) -> Result<RankOutcome, GatewayError> {
        if candidates.len() < 2 {
            return Err(GatewayError::InvalidRequest(format!("ranking needs >= 2 candidates, got {}", candidates.len())));
        }
        let labels: Vec<String> = (1..=candidates.len()).map(|i| format!("C{i}")).collect();
        let payload = candidate_payload(&labels, candidates);
        let (label_order, label_scores) = self.ask(template_id, &payload, |v| {
            let ranking = v.get("ranking").and_then(Value::as_array).ok_or("missing \"ranking\" array")?;
            let order: Vec<String> = ranking.iter().filter_map(|x| x.as_str().map(str::to_string)).collect();
            Ok((order, v.get("scores").cloned()))
        })?;

        let (order, repaired) = repair_permutation(&label_order, &labels);
        let to_id: HashMap<&str, &str> = labels.iter().map(String::as_str).zip(candidates.iter().map(|c| c.0.as_str())).collect();
        let raw_scores = label_scores.as_ref().and_then(|s| scores_for(s, &labels)).map(|scores| {
            scores.into_iter().map(|(label, s)| (to_id[label.as_str()].to_string(), s)).collect::<BTreeMap<_, _>>()
        });
        if label_scores.is_some() && raw_scores.is_none() {
            self.warn(format!("{template_id}: scores incomplete or invalid, dropped"));
        }
        if repaired {
            self.warn(format!("{template_id}: ranking repaired to a valid permutation"));
        }
        Ok(RankOutcome {
            ranking: CriterionRanking {
                criterion_id: criterion_id.to_string(),
                order: order.iter().map(|l| to_id[l.as_str()].to_string()).collect(),
                raw_scores,
            },
            repairs: usize::from(repaired),
        })
    }

    /// One joint call returning per-criterion scores for every candidate;
    /// each criterion becomes a ranking ordered by score (ties in input order).
    pub fn score_jointly(
        &self,
        template_id: &str,
        criteria: &[&str],
        candidates: &[(String, String)],
    ) -> Result<Vec<CriterionRanking>, GatewayError> {
        if candidates.len() < 2 {
            return Err(GatewayError::InvalidRequest(format!("ranking needs >= 2 candidates, got {}", candidates.len())));
        }
        let labels: Vec<String> = (1..=candidates.len()).map(|i| format!("C{i}")).collect();
        let payload = candidate_payload(&labels, candidates);
        let per_criterion = self.ask(template_id, &payload, |v| {
            let scores = v.get("scores").ok_or("missing \"scores\" object")?;
            criteria
                .iter()
                .map(|c| {
                    let s = scores.get(*c).ok_or_else(|| format!("missing scores for {c:?}"))?;
                    scores_for(s, &labels).ok_or_else(|| format!("incomplete scores for {c:?}"))
                })
                .collect::<Result<Vec<_>, String>>()
        })?;
        Ok(criteria
            .iter()
            .zip(per_criterion)
            .map(|(criterion, scores)| {
                let mut idx: Vec<usize> = (0..candidates.len()).collect();
                idx.sort_by(|&a, &b| scores[b].1.total_cmp(&scores[a].1).then(a.cmp(&b)));
                CriterionRanking {
                    criterion_id: criterion.to_string(),
                    order: idx.iter().map(|&i| candidates[i].0.clone()).collect(),
                    raw_scores: Some(candidates.iter().zip(&scores).map(|(c, (_, s))| (c.0.clone(), *s)).collect()),
                }
            })
            .collect())
    }

    /// Exactly `n` non-empty texts (`{"items": [...]}`).
    pub fn generate(&self, template_id: &str, payload: &Payload, n: usize) -> Result<Vec<String>, GatewayError> {
        if n == 0 {
            return Err(GatewayError::InvalidRequest("generate needs n >= 1".into()));
        }
        self.ask(template_id, payload, |v| {
            let items = v.get("items").and_then(Value::as_array).ok_or("missing \"items\" array")?;
            let texts: Vec<String> = items
                .iter()
                .filter_map(Value::as_str)
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect();
            if texts.len() != n {
                return Err(format!("expected {n} items, got {}", texts.len()));
            }
            Ok(texts)
        })
    }

    /// A single free-text field (`{"<field>": "..."}`); empty strings allowed.
    pub fn generate_field(&self, template_id: &str, payload: &Payload, field: &str) -> Result<String, GatewayError> {
        self.ask(template_id, payload, |v| {
            v.get(field)
                .and_then(Value::as_str)
                .map(|s| s.trim().to_string())
                .ok_or_else(|| format!("missing string field {field:?}"))
        })
    }

    /// Embeds texts under `model_id`, in batches, checking that every vector
    /// under one model shares a dimension and has non-zero norm.
    pub fn embed(&self, texts: &[String], model_id: &str) -> Result<Vec<EmbeddingVector>, GatewayError> {
        if texts.is_empty() {
            return Err(GatewayError::InvalidRequest("embed needs a non-empty list".into()));
        }
        const BATCH: usize = 64;
        let mut out = Vec::with_capacity(texts.len());
        for batch in texts.chunks(BATCH) {
            let result = self.with_retries("embedding", || self.backend.embed(batch, model_id, self.seed))?;
            self.ledger.record(Stage::Embedding, model_id, result.prompt_tokens, 0);
            if result.vectors.len() != batch.len() {
                return Err(GatewayError::Parse {
                    template: "embedding".into(),
                    reason: format!("expected {} vectors, got {}", batch.len(), result.vectors.len()),
                    transcript: Vec::new(),
                });
            }
            for values in result.vectors {
                self.check_dimension(model_id, values.len())?;
                let v = EmbeddingVector { values, model_id: model_id.to_string() };
                if v.norm() <= 0.0 || !v.norm().is_finite() {
                    return Err(GatewayError::Parse {
                        template: "embedding".into(),
                        reason: "zero or non-finite vector".into(),
                        transcript: Vec::new(),
                    });
                }
                out.push(v);
            }
        }
        Ok(out)
    }

    fn check_dimension(&self, model_id: &str, dim: usize) -> Result<(), GatewayError> {
        let mut dims = self.dims.lock().unwrap_or_else(PoisonError::into_inner);
        match dims.get(model_id) {
            Some(&expected) if expected != dim => {
                Err(GatewayError::DimensionMismatch { model: model_id.to_string(), expected, got: dim })
            }
            Some(_) => Ok(()),
            None => {
                dims.insert(model_id.to_string(), dim);
                Ok(())
            }
        }
    }

    pub fn write_transcripts(&self, path: &Path) -> std::io::Result<()> {
        crate::io::write_jsonl(path, &self.transcripts())
    }
}

fn candidate_payload(labels: &[String], candidates: &[(String, String)]) -> Payload {
    let items: Vec<Value> = labels.iter().zip(candidates).map(|(l, (_, text))| json!({"id": l, "text": text})).collect();
    [("candidates".to_string(), Value::Array(items))].into()
}

fn scores_for(scores: &Value, labels: &[String]) -> Option<Vec<(String, f64)>> {
    labels
        .iter()
        .map(|l| {
            let s = scores.get(l)?.as_f64()?;
            s.is_finite().then(|| (l.clone(), s.clamp(0.0, 1.0)))
        })
        .collect()
}

/// Drops duplicates and unknown labels, then appends missing labels in input
/// order. Returns whether anything changed.
pub fn repair_permutation(order: &[String], labels: &[String]) -> (Vec<String>, bool) {
    let mut seen = std::collections::HashSet::new();
    let mut out: Vec<String> = order
        .iter()
        .filter(|l| labels.contains(l) && seen.insert(l.as_str()))
        .cloned()
        .collect();
    let kept = out.len();
    for l in labels {
        if !seen.contains(l.as_str()) {
            out.push(l.clone());
        }
    }
    let repaired = kept != order.len() || out.len() != kept;
    (out, repaired)
}

fn parse_outcome(label: &str) -> Result<Outcome, String> {
    match label.trim().to_ascii_uppercase().as_str() {
        "PASS" | "YES" | "TRUE" | "REDUNDANT" | "CORRECT" => Ok(Outcome::Pass),
        "FAIL" | "NO" | "FALSE" | "UNIQUE" | "INCORRECT" => Ok(Outcome::Fail),
        other => Err(format!("unrecognised verdict {other:?}")),
    }
}

fn parse_verdict(v: &Value, criterion_id: &str) -> Result<Verdict, String> {
    let label = v.get("verdict").and_then(Value::as_str).ok_or("missing \"verdict\" string")?;
    Ok(Verdict {
        outcome: parse_outcome(label)?,
        rationale: v.get("rationale").and_then(Value::as_str).unwrap_or_default().to_string(),
        criterion_id: criterion_id.to_string(),
        by_error: false,
    })
}

/// Lenient extraction: the whole text if it parses, else the first balanced
/// `{...}` or `[...]` span that parses (code fences and prose around it are
/// ignored).
pub fn extract_json(text: &str) -> Option<Value> {
    let trimmed = text.trim();
    if let Ok(v) = serde_json::from_str(trimmed) {
        return Some(v);
    }
    let bytes = trimmed.as_bytes();
    for (start, &b) in bytes.iter().enumerate() {
        if b != b'{' && b != b'[' {
            continue;
        }
        let mut depth = 0i32;
        let mut in_str = false;
        let mut escaped = false;
        for (off, &c) in bytes[start..].iter().enumerate() {
            if in_str {
                match c {
                    _ if escaped => escaped = false,
                    b'\\' => escaped = true,
                    b'"' => in_str = false,
                    _ => {}
                }
                continue;
            }
            match c {
                b'"' => in_str = true,
                b'{' | b'[' => depth += 1,
                b'}' | b']' => {
                    depth -= 1;
                    if depth == 0 {
                        if let Ok(v) = serde_json::from_str(&trimmed[start..start + off + 1]) {
                            return Some(v);
                        }
                        break;
                    }
                }
                _ => {}
            }
        }
    }
    None
}

pub fn payload_digest(payload: &Payload) -> String {
    let canonical = serde_json::to_string(payload).expect("payload serializes");
    sha256_hex(canonical.as_bytes())
}

/// Token estimate used when a backend does not report usage.
pub fn estimate_tokens(text: &str) -> u64 {
    count_tokens(text) as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::mock::Scripted;

    fn text_payload(key: &str, value: &str) -> Payload {
        [(key.to_string(), json!(value))].into()
    }

    fn fast_mock(rules: MockRules) -> (Gateway, std::sync::Arc<MockBackend>) {
        let backend = std::sync::Arc::new(MockBackend::new(rules));
        let gw = Gateway::builder(Box::new(backend.clone()))
            .retry(RetryPolicy { attempts: 3, base_delay_ms: 1, max_delay_ms: 2 })
            .build();
        (gw, backend)
    }

    #[test]
    fn extract_json_lenient() {
        assert_eq!(extract_json("{\"a\":1}"), Some(json!({"a": 1})));
        assert_eq!(extract_json("Sure!\n```json\n{\"a\": \"}\"}\n```"), Some(json!({"a": "}"})));
        assert_eq!(extract_json("no json here"), None);
        assert_eq!(extract_json("{broken} then [1,2]"), Some(json!([1, 2])));
    }

    #[test]
    fn repair_permutation_duplicate_and_missing() {
        let labels: Vec<String> = ["A", "B", "C"].iter().map(|s| s.to_string()).collect();
        let (order, repaired) = repair_permutation(&["B".into(), "B".into(), "A".into()], &labels);
        assert_eq!(order, vec!["B", "A", "C"]);
        assert!(repaired);
        let (order, repaired) = repair_permutation(&["C".into(), "A".into(), "B".into()], &labels);
        assert_eq!(order, vec!["C", "A", "B"]);
        assert!(!repaired);
        let (order, repaired) = repair_permutation(&["Z".into(), "A".into()], &labels);
        assert_eq!(order, vec!["A", "B", "C"]);
        assert!(repaired);
    }

    #[test]
    fn judge_equivalence_reflexive() {
        let gw = Gateway::mock(42);
        let payload: Payload = [
            ("target".to_string(), json!("Water boils at 100C.")),
            ("candidates".to_string(), json!([{"id": "C1", "text": "Water boils at 100C."}])),
        ]
        .into();
        let v = gw.judge_list(ids::REDUNDANCY_JUDGE, &payload, 1).unwrap();
        assert_eq!(v[0].outcome, Outcome::Pass);
    }

    #[test]
    fn judge_validity_fragment_fails() {
        let gw = Gateway::mock(42);
        let v = gw
            .judge_multi(ids::VALIDITY_FILTER, &text_payload("atom", "Boils."), &mock::VALIDITY_CRITERIA)
            .unwrap();
        assert_eq!(v[0].outcome, Outcome::Fail);
    }

    #[test]
    fn unparseable_twice_is_parse_error_with_transcript() {
        let (gw, backend) = fast_mock(MockRules::default());
        backend.script(ids::E2E_JUDGE, vec![Scripted::Text("garbage".into()), Scripted::Text("still garbage".into())]);
        let payload: Payload = [
            ("question".to_string(), json!("q")),
            ("reference".to_string(), json!("r")),
            ("answer".to_string(), json!("a")),
        ]
        .into();
        match gw.judge(ids::E2E_JUDGE, &payload) {
            Err(GatewayError::Parse { transcript, .. }) => assert_eq!(transcript, vec!["garbage", "still garbage"]),
            other => panic!("expected parse error, got {other:?}"),
        }
        // both attempts were priced
        assert_eq!(gw.cost_report().total.calls, 2);
    }

    #[test]
    fn reask_recovers() {
        let (gw, backend) = fast_mock(MockRules::default());
        backend.script(ids::E2E_JUDGE, vec![Scripted::Text("oops".into())]);
        let payload: Payload = [
            ("question".to_string(), json!("q")),
            ("reference".to_string(), json!("Paris.")),
            ("answer".to_string(), json!("Paris.")),
        ]
        .into();
        assert!(gw.judge(ids::E2E_JUDGE, &payload).unwrap().passed());
    }

    #[test]
    fn transport_failures_retry_then_surface() {
        let (gw, backend) = fast_mock(MockRules::default());
        let timeout = TransportError::new(TransportKind::Timeout, "slow");
        backend.script(ids::QUESTION_GENERATION, vec![Scripted::Fail(timeout.clone()); 3]);
        let payload: Payload = [
            ("evidence".to_string(), json!([{"id": "a1", "text": "Water boils at 100C."}])),
            ("n".to_string(), json!("3")),
        ]
        .into();
        match gw.generate(ids::QUESTION_GENERATION, &payload, 3) {
            Err(GatewayError::Transport { attempts, .. }) => assert_eq!(attempts, 3),
            other => panic!("expected transport error, got {other:?}"),
        }
        // two failures then success
        backend.script(ids::QUESTION_GENERATION, vec![Scripted::Fail(timeout.clone()), Scripted::Fail(timeout)]);
        assert_eq!(gw.generate(ids::QUESTION_GENERATION, &payload, 3).unwrap().len(), 3);
    }

    #[test]
    fn non_retryable_fails_immediately() {
        let (gw, backend) = fast_mock(MockRules::default());
        backend.script(ids::E2E_JUDGE, vec![Scripted::Fail(TransportError::new(TransportKind::Client(401), "bad key"))]);
        let payload: Payload = [
            ("question".to_string(), json!("q")),
            ("reference".to_string(), json!("r")),
            ("answer".to_string(), json!("r")),
        ]
        .into();
        assert!(matches!(gw.judge(ids::E2E_JUDGE, &payload), Err(GatewayError::Transport { attempts: 1, .. })));
    }

    #[test]
    fn rank_two_candidates_by_override() {
        let mut rules = MockRules::default();
        rules.score_overrides.insert(("validity".into(), "first".into()), 0.9);
        rules.score_overrides.insert(("validity".into(), "second".into()), 0.1);
        let (gw, _) = fast_mock(rules);
        let cands = vec![("a".to_string(), "first".to_string()), ("b".to_string(), "second".to_string())];
        let out = gw.rank_by_criterion(ids::RANK_ATOM_VALIDITY, "validity", &cands).unwrap();
        assert_eq!(out.ranking.order, vec!["a", "b"]);
        assert_eq!(out.repairs, 0);
        assert_eq!(out.ranking.raw_scores.unwrap()["a"], 0.9);
    }

    #[test]
    fn rank_repair_counts_one_warning() {
        let (gw, backend) = fast_mock(MockRules::default());
        backend.script(ids::RANK_ATOM_CLARITY, vec![Scripted::Text(r#"{"ranking": ["C2", "C2", "C1"]}"#.into())]);
        let cands: Vec<(String, String)> = ["A", "B", "C"].iter().map(|s| (s.to_string(), format!("text {s}"))).collect();
        let out = gw.rank_by_criterion(ids::RANK_ATOM_CLARITY, "clarity", &cands).unwrap();
        assert_eq!(out.ranking.order, vec!["B", "A", "C"]);
        assert_eq!(out.repairs, 1);
        assert!(out.ranking.raw_scores.is_none());
        assert_eq!(gw.warnings().len(), 1);
    }

    #[test]
    fn rank_is_deterministic() {
        let gw = Gateway::mock(7);
        let cands: Vec<(String, String)> =
            (0..6).map(|i| (format!("id{i}"), format!("Fact number {i} about Rome in {}.", 1900 + i))).collect();
        let first = gw.rank_by_criterion(ids::RANK_ATOM_SPECIFICITY, "specificity", &cands).unwrap();
        for _ in 0..100 {
            assert_eq!(gw.rank_by_criterion(ids::RANK_ATOM_SPECIFICITY, "specificity", &cands).unwrap(), first);
        }
    }

    #[test]
    fn rank_needs_two() {
        let gw = Gateway::mock(1);
        let one = vec![("a".to_string(), "x".to_string())];
        assert!(matches!(gw.rank_by_criterion(ids::RANK_ATOM_CLARITY, "clarity", &one), Err(GatewayError::InvalidRequest(_))));
    }

    #[test]
    fn generate_ten_distinct() {
        let gw = Gateway::mock(42);
        let payload: Payload = [
            ("evidence".to_string(), json!([{"id": "a1", "text": "Marie Curie worked at the University of Paris."}])),
            ("n".to_string(), json!("10")),
        ]
        .into();
        let out = gw.generate(ids::QUESTION_GENERATION, &payload, 10).unwrap();
        assert_eq!(out.len(), 10);
        let distinct: std::collections::HashSet<_> = out.iter().collect();
        assert_eq!(distinct.len(), 10);
    }

    #[test]
    fn generate_one_embeds_payload_digest() {
        let gw = Gateway::mock(42);
        let payload: Payload = [
            ("evidence".to_string(), json!([{"id": "a1", "text": "The Berlin Wall collapsed in 1989."}])),
            ("n".to_string(), json!("1")),
        ]
        .into();
        let out = gw.generate(ids::QUESTION_GENERATION, &payload, 1).unwrap();
        assert!(out[0].contains(&payload_digest(&payload)[..8]));
    }

    #[test]
    fn embed_identical_and_perturbed() {
        let gw = Gateway::mock(42);
        let texts = vec!["Water boils at 100C.".to_string(), "Water boils at 100C.".to_string(), "Water boils at 101C.".to_string()];
        let v = gw.embed(&texts, "mock-embed").unwrap();
        assert_eq!(v[0], v[1]);
        assert_eq!(v[0].values.len(), v[2].values.len());
        let c = v[0].cosine(&v[2]);
        assert!(c < 1.0 - 1e-9, "cosine {c}");
        assert!((v[0].norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn embed_dimension_mismatch_is_fatal() {
        let mut rules = MockRules::default();
        rules.embedding_dims.insert("m".into(), 16);
        let (gw, backend) = fast_mock(rules);
        gw.embed(&["a b c".to_string()], "m").unwrap();
        backend.set_embedding_dim("m", 32);
        assert!(matches!(
            gw.embed(&["d e f".to_string()], "m"),
            Err(GatewayError::DimensionMismatch { expected: 16, got: 32, .. })
        ));
    }

    #[test]
    fn ledger_records_every_call() {
        let gw = Gateway::mock(42);
        assert_eq!(gw.cost_report().total.calls, 0);
        gw.judge_multi(ids::VALIDITY_FILTER, &text_payload("atom", "Water boils at 100C."), &mock::VALIDITY_CRITERIA)
            .unwrap();
        gw.embed(&["x y z".to_string()], "e").unwrap();
        let r = gw.cost_report();
        assert_eq!(r.stages[&Stage::ValidSelection].calls, 1);
        assert_eq!(r.stages[&Stage::Embedding].calls, 1);
        assert!(r.total.prompt_tokens > 0);
    }

    #[test]
    fn in_flight_bound_respected() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        use std::sync::Arc;

        struct Slow {
            active: AtomicUsize,
            peak: AtomicUsize,
        }
        impl Backend for Slow {
            fn name(&self) -> &str {
                "slow"
            }
            fn complete(&self, _: &CompletionRequest<'_>) -> Result<Completion, TransportError> {
                let now = self.active.fetch_add(1, Ordering::SeqCst) + 1;
                self.peak.fetch_max(now, Ordering::SeqCst);
                std::thread::sleep(Duration::from_millis(5));
                self.active.fetch_sub(1, Ordering::SeqCst);
                Ok(Completion { text: r#"{"verdict":"PASS"}"#.into(), prompt_tokens: 1, completion_tokens: 1 })
            }
            fn embed(&self, _: &[String], _: &str, _: u64) -> Result<EmbeddingBatch, TransportError> {
                unreachable!()
            }
        }
        let slow = Arc::new(Slow { active: AtomicUsize::new(0), peak: AtomicUsize::new(0) });
        let gw = Gateway::builder(Box::new(slow.clone())).max_in_flight(3).build();
        let payload: Payload = [
            ("question".to_string(), json!("q")),
            ("reference".to_string(), json!("r")),
            ("answer".to_string(), json!("a")),
        ]
        .into();
        std::thread::scope(|s| {
            for _ in 0..12 {
                s.spawn(|| gw.judge(ids::E2E_JUDGE, &payload).unwrap());
            }
        });
        assert!(slow.peak.load(Ordering::SeqCst) <= 3);
        assert_eq!(gw.cost_report().total.calls, 12);
    }
}
