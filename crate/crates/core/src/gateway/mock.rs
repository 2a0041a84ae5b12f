//! Deterministic rule-based backend for tests, examples and offline runs.
//!
//! Every reply is a pure function of the template id, the payload, the
//! gateway seed and the [`MockRules`]. Scripted replies can be queued per
//! template to exercise malformed output and transport failures.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::sync::{Mutex, PoisonError};

use serde_json::{json, Value};

use super::templates::{ids, Payload};
use super::{estimate_tokens, payload_digest, Backend, Completion, CompletionRequest, EmbeddingBatch, TransportError};
use crate::corpus::{RuleSentenceSplitter, SentenceSplitter};
use crate::text::{digest_u64, keywords, normalize_for_match, unit_hash, words};

pub const VALIDITY_CRITERIA: [&str; 3] = ["complete", "utility", "factual"];

pub const DEFAULT_EMBEDDING_DIM: usize = 256;

const PRONOUNS: &[&str] = &[
    "he", "her", "hers", "him", "his", "it", "its", "our", "ours", "she", "their", "theirs", "them", "they", "us", "we",
];
const DEMONSTRATIVES: &[&str] = &["these", "this", "those", "that"];
const ARTICLES: &[&str] = &["a", "an", "the"];
const META_MARKERS: &[&str] = &["document", "page", ".pdf", "http", "www.", "title", "section", "file"];
const CONTEXT_PHRASES: &[&str] = &[
    "according to the",
    "based on the",
    "in the document",
    "in the passage",
    "in the text",
    "in this document",
    "the above",
    "the following",
    "the provided",
    "the table",
];
const COMPARATIVES: &[&str] = &[
    "better", "bigger", "fewer", "greater", "higher", "larger", "less", "lower", "more", "smaller", "worse",
];

/// One queued reply.
#[derive(Debug, Clone)]
pub enum Scripted {
    Text(String),
    Fail(TransportError),
}

#[derive(Debug, Clone)]
pub struct MockRules {
    /// `(criterion, candidate text)` -> score, bypassing the heuristic.
    pub score_overrides: HashMap<(String, String), f64>,
    /// `(template id, marker)`: any judgment whose payload contains `marker`
    /// fails under that template.
    pub forced_failures: BTreeSet<(String, String)>,
    /// Declared equivalent pairs on top of normalized exact match.
    pub equivalent_pairs: BTreeSet<(String, String)>,
    /// Normalized question -> answer known without retrieval.
    pub knowledge: BTreeMap<String, String>,
    pub embedding_dims: HashMap<String, usize>,
    /// When false, question generation always emits well-formed questions.
    pub flawed_variants: bool,
}

impl Default for MockRules {
    fn default() -> Self {
        Self {
            score_overrides: HashMap::new(),
            forced_failures: BTreeSet::new(),
            equivalent_pairs: BTreeSet::new(),
            knowledge: BTreeMap::new(),
            embedding_dims: HashMap::new(),
            flawed_variants: true,
        }
    }
}

impl MockRules {
    pub fn declare_equivalent(&mut self, a: &str, b: &str) {
        let (a, b) = (normalize_for_match(a), normalize_for_match(b));
        self.equivalent_pairs.insert((a.clone(), b.clone()));
        self.equivalent_pairs.insert((b, a));
    }

    pub fn force_failure(&mut self, template_id: &str, marker: &str) {
        self.forced_failures.insert((template_id.to_string(), marker.to_string()));
    }

    pub fn learn(&mut self, question: &str, answer: &str) {
        self.knowledge.insert(normalize_for_match(question), answer.to_string());
    }

    /// Learns the answer to roughly `pct` percent of the given
    /// `(item id, question, answer)` triples, chosen by item digest.
    pub fn learn_fraction<'a>(&mut self, items: impl IntoIterator<Item = (&'a str, &'a str, &'a str)>, pct: f64) {
        for (id, question, answer) in items {
            if unit_hash(&[b"parametric", id.as_bytes()]) * 100.0 < pct {
                self.learn(question, answer);
            }
        }
    }

    pub fn are_equivalent(&self, a: &str, b: &str) -> bool {
        let (a, b) = (normalize_for_match(a), normalize_for_match(b));
        a == b || self.equivalent_pairs.contains(&(a, b))
    }

    fn forced(&self, template_id: &str, payload: &Payload) -> bool {
        if self.forced_failures.is_empty() {
            return false;
        }
        let flat = serde_json::to_string(payload).unwrap_or_default();
        self.forced_failures.iter().any(|(t, m)| t == template_id && flat.contains(m.as_str()))
    }
}

#[derive(Debug, Default)]
pub struct MockBackend {
    rules: MockRules,
    scripts: Mutex<HashMap<String, VecDeque<Scripted>>>,
    dims: Mutex<HashMap<String, usize>>,
}

impl MockBackend {
    pub fn new(rules: MockRules) -> Self {
        let dims = Mutex::new(rules.embedding_dims.clone());
        Self { rules, scripts: Mutex::new(HashMap::new()), dims }
    }

    pub fn rules(&self) -> &MockRules {
        &self.rules
    }

    /// Queues replies consumed (first in, first out) by calls to `template_id`
    /// before any rule-based reply.
    pub fn script(&self, template_id: &str, replies: Vec<Scripted>) {
        self.scripts
            .lock()
            .unwrap_or_else(PoisonError::into_inner)
            .entry(template_id.to_string())
            .or_default()
            .extend(replies);
    }

    pub fn set_embedding_dim(&self, model_id: &str, dim: usize) {
        self.dims.lock().unwrap_or_else(PoisonError::into_inner).insert(model_id.to_string(), dim);
    }

    fn next_scripted(&self, template_id: &str) -> Option<Scripted> {
        self.scripts.lock().unwrap_or_else(PoisonError::into_inner).get_mut(template_id)?.pop_front()
    }

    fn respond(&self, template_id: &str, payload: &Payload, seed: u64) -> Value {
        let forced = self.rules.forced(template_id, payload);
        match template_id {
            ids::ATOMIC_EXTRACTION => json!({ "atoms": extract(str_slot(payload, "chunk_text")) }),
            ids::VALIDITY_FILTER => {
                let atom = str_slot(payload, "atom");
                let mut out = serde_json::Map::new();
                for (criterion, ok) in VALIDITY_CRITERIA.iter().zip(validity(atom)) {
                    out.insert(criterion.to_string(), verdict(ok && !forced, criterion));
                }
                Value::Object(out)
            }
            ids::RANK_COMBINED => {
                let cands = candidates(payload);
                let scores: serde_json::Map<String, Value> = crate::crrf::ATOM_CRITERIA
                    .iter()
                    .map(|c| {
                        let per: serde_json::Map<String, Value> =
                            cands.iter().map(|(l, t)| (l.clone(), json!(self.score(c, t, seed)))).collect();
                        (c.to_string(), Value::Object(per))
                    })
                    .collect();
                json!({ "scores": scores })
            }
            t if t.starts_with("rank_") => {
                let criterion = t.trim_start_matches("rank_atom_").trim_start_matches("rank_question_").trim_start_matches("rank_");
                let cands = candidates(payload);
                let scores: Vec<f64> = cands.iter().map(|(_, text)| self.score(criterion, text, seed)).collect();
                let mut idx: Vec<usize> = (0..cands.len()).collect();
                idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
                json!({
                    "ranking": idx.iter().map(|&i| cands[i].0.clone()).collect::<Vec<_>>(),
                    "scores": cands.iter().zip(&scores).map(|((l, _), s)| (l.clone(), json!(s))).collect::<serde_json::Map<_, _>>(),
                })
            }
            ids::REDUNDANCY_JUDGE => {
                let target = str_slot(payload, "target");
                let verdicts: Vec<&str> = candidates(payload)
                    .iter()
                    .map(|(_, text)| if !forced && self.rules.are_equivalent(target, text) { "REDUNDANT" } else { "UNIQUE" })
                    .collect();
                json!({ "verdicts": verdicts })
            }
            ids::SELECT_CONNECTED => {
                let pool = candidates(payload);
                let m: usize = str_slot(payload, "m").trim().parse().unwrap_or(1);
                json!({ "selected": select_connected(&pool, m) })
            }
            ids::QUESTION_GENERATION => {
                let n: usize = str_slot(payload, "n").trim().parse().unwrap_or(1);
                json!({ "items": self.questions(payload, n, seed) })
            }
            ids::FILTER_CONTEXTUAL_INDEPENDENCE => {
                let q = normalize_for_match(str_slot(payload, "question"));
                let ok = !CONTEXT_PHRASES.iter().any(|p| contains_phrase(&q, p));
                verdict(ok && !forced, "contextual_independence")
            }
            ids::FILTER_ANSWER_EXCLUSION => {
                let q = str_slot(payload, "question");
                let nq = normalize_for_match(q);
                let leaks = candidates_in(payload, "evidence")
                    .iter()
                    .any(|(_, t)| contains_phrase(&nq, &normalize_for_match(t)));
                let ok = !has_leading_statement(q) && !leaks;
                verdict(ok && !forced, "answer_exclusion")
            }
            ids::FILTER_INFORMATION_EQUIVALENCE => {
                let q = str_slot(payload, "question");
                let evidence = candidates_in(payload, "evidence");
                let qk = keywords(q);
                let uk: BTreeSet<String> = evidence.iter().flat_map(|(_, t)| keywords(t)).collect();
                let every_unit_used = evidence.iter().all(|(_, t)| keywords(t).iter().any(|k| qk.contains(k)));
                let ok = every_unit_used && coverage(&qk, &uk) >= 0.5;
                verdict(ok && !forced, "information_equivalence")
            }
            ids::FILTER_QUESTION_CLARITY => {
                let ok = is_clear(str_slot(payload, "question"));
                verdict(ok && !forced, "question_clarity")
            }
            ids::FILTER_ANSWERABILITY => {
                let q = str_slot(payload, "question");
                let ck: BTreeSet<String> = candidates_in(payload, "chunks").iter().flat_map(|(_, t)| keywords(t)).collect();
                let ok = !forced && coverage(&keywords(q), &ck) >= 0.5;
                let answer: Vec<String> = candidates_in(payload, "evidence").into_iter().map(|(_, t)| t).collect();
                let mut v = verdict(ok, "answerability");
                v["answer"] = json!(if ok { answer.join(" ") } else { String::new() });
                v
            }
            ids::E2E_ANSWER => {
                let q = normalize_for_match(str_slot(payload, "question"));
                let context = str_slot(payload, "context").trim();
                let mut parts = Vec::new();
                if let Some(known) = self.rules.knowledge.get(&q) {
                    parts.push(known.clone());
                }
                if !context.is_empty() {
                    parts.push(context.to_string());
                }
                json!({ "answer": parts.join(" ") })
            }
            ids::E2E_JUDGE => {
                let reference = str_slot(payload, "reference");
                let answer = normalize_for_match(str_slot(payload, "answer"));
                let sentences = RuleSentenceSplitter.sentences(reference);
                let ok = !answer.is_empty()
                    && !sentences.is_empty()
                    && sentences.iter().all(|s| contains_phrase(&answer, &normalize_for_match(s)));
                verdict(ok && !forced, "e2e_correct")
            }
            other => json!({ "error": format!("mock has no rule for template {other}") }),
        }
    }

    fn score(&self, criterion: &str, text: &str, seed: u64) -> f64 {
        if let Some(s) = self.rules.score_overrides.get(&(criterion.to_string(), text.to_string())) {
            return *s;
        }
        let jitter = unit_hash(&[&seed.to_le_bytes(), criterion.as_bytes(), text.as_bytes()]);
        0.6 * heuristic(criterion, text) + 0.4 * jitter
    }

    fn questions(&self, payload: &Payload, n: usize, seed: u64) -> Vec<String> {
        let evidence = candidates_in(payload, "evidence");
        let digest = payload_digest(payload);
        let tag = &digest[..8];
        let per_unit: Vec<Vec<String>> = evidence.iter().map(|(_, t)| keywords(t).into_iter().take(2).collect()).collect();
        let all: Vec<String> = per_unit.iter().flatten().cloned().collect();
        (0..n)
            .map(|i| {
                let variant = if self.rules.flawed_variants {
                    digest_u64(&[&seed.to_le_bytes(), digest.as_bytes(), &(i as u64).to_le_bytes()]) % 10
                } else {
                    9
                };
                let stamp = format!("q{i}d{tag}");
                let core = |kws: &[String]| format!("How are {} related? {stamp}", kws.join(", "));
                match variant {
                    0 => format!("Based on the document provided, {}", lowercase_first(&core(&all))),
                    1 => format!("{} {}", evidence.first().map_or("", |e| e.1.as_str()), core(&all)),
                    2 => core(per_unit.first().map_or(&[][..], |k| &k[..1.min(k.len())])),
                    3 => format!("How are our {} related? {stamp}", all.join(", ")),
                    _ => core(&all),
                }
            })
            .collect()
    }
}

impl Backend for MockBackend {
    fn name(&self) -> &str {
        "mock"
    }

    fn complete(&self, request: &CompletionRequest<'_>) -> Result<Completion, TransportError> {
        let text = match self.next_scripted(&request.template.id) {
            Some(Scripted::Fail(e)) => return Err(e),
            Some(Scripted::Text(t)) => t,
            None => self.respond(&request.template.id, request.payload, request.seed).to_string(),
        };
        Ok(Completion {
            prompt_tokens: estimate_tokens(&request.prompt),
            completion_tokens: estimate_tokens(&text),
            text,
        })
    }

    fn embed(&self, texts: &[String], model_id: &str, _seed: u64) -> Result<EmbeddingBatch, TransportError> {
        let dim = *self.dims.lock().unwrap_or_else(PoisonError::into_inner).get(model_id).unwrap_or(&DEFAULT_EMBEDDING_DIM);
        Ok(EmbeddingBatch {
            vectors: texts.iter().map(|t| mock_embedding(t, model_id, dim)).collect(),
            prompt_tokens: texts.iter().map(|t| estimate_tokens(t)).sum(),
        })
    }
}

/// Unit vector mixing a hashed bag of keywords with a text-seeded random
/// component: shared keywords raise cosine, any textual change lowers it.
pub fn mock_embedding(text: &str, model_id: &str, dim: usize) -> Vec<f64> {
    let dim = dim.max(1);
    let mut bow = vec![0.0; dim];
    for k in keywords(text) {
        let h = digest_u64(&[b"kw", k.as_bytes()]);
        bow[(h % dim as u64) as usize] += if (h >> 32) & 1 == 0 { 1.0 } else { -1.0 };
    }
    let noise: Vec<f64> = (0..dim)
        .map(|i| unit_hash(&[model_id.as_bytes(), text.as_bytes(), &(i as u64).to_le_bytes()]) * 2.0 - 1.0)
        .collect();
    let unit = |v: &[f64]| {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| if n > 0.0 { x / n } else { 0.0 }).collect::<Vec<_>>()
    };
    let (bow, noise) = (unit(&bow), unit(&noise));
    unit(&bow.iter().zip(&noise).map(|(b, n)| b + 0.35 * n).collect::<Vec<_>>())
}

fn str_slot<'a>(payload: &'a Payload, key: &str) -> &'a str {
    payload.get(key).and_then(Value::as_str).unwrap_or("")
}

fn candidates(payload: &Payload) -> Vec<(String, String)> {
    let key = if payload.contains_key("candidates") { "candidates" } else { "pool" };
    candidates_in(payload, key)
}

fn candidates_in(payload: &Payload, key: &str) -> Vec<(String, String)> {
    payload
        .get(key)
        .and_then(Value::as_array)
        .map(|items| {
            items
                .iter()
                .enumerate()
                .map(|(i, item)| match item {
                    Value::String(s) => (format!("{}", i + 1), s.clone()),
                    _ => (
                        item.get("id").and_then(Value::as_str).unwrap_or_default().to_string(),
                        item.get("text").and_then(Value::as_str).unwrap_or_default().to_string(),
                    ),
                })
                .collect()
        })
        .unwrap_or_default()
}

fn verdict(ok: bool, criterion: &str) -> Value {
    json!({
        "verdict": if ok { "PASS" } else { "FAIL" },
        "rationale": format!("{criterion}: rule {}", if ok { "satisfied" } else { "violated" }),
    })
}

fn contains_phrase(haystack: &str, needle: &str) -> bool {
    !needle.is_empty() && format!(" {haystack} ").contains(&format!(" {needle} "))
}

fn coverage(of: &[String], within: &BTreeSet<String>) -> f64 {
    if of.is_empty() {
        return 0.0;
    }
    of.iter().filter(|k| within.contains(*k)).count() as f64 / of.len() as f64
}

fn lowercase_first(s: &str) -> String {
    let mut c = s.chars();
    c.next().map_or_else(String::new, |f| f.to_lowercase().chain(c).collect())
}

/// Sentences, with `X, and Y` / `X; Y` compounds split when both halves are
/// substantial clauses.
fn extract(chunk: &str) -> Vec<String> {
    let mut atoms = Vec::new();
    for sentence in RuleSentenceSplitter.sentences(chunk) {
        let mut rest = sentence.trim().to_string();
        loop {
            let split = [", and ", "; "].iter().find_map(|sep| {
                let pos = rest.find(sep)?;
                let (left, right) = (&rest[..pos], &rest[pos + sep.len()..]);
                let ok = left.split_whitespace().count() >= 3
                    && right.split_whitespace().count() >= 3
                    && right.chars().next().is_some_and(char::is_uppercase);
                ok.then(|| (left.to_string(), right.to_string()))
            });
            match split {
                Some((left, right)) => {
                    atoms.push(format!("{left}."));
                    rest = right;
                }
                None => break,
            }
        }
        if !rest.is_empty() {
            atoms.push(rest);
        }
    }
    atoms
}

fn validity(atom: &str) -> [bool; 3] {
    let w = words(atom);
    let first = w.first().map(String::as_str).unwrap_or("");
    let fragment_verb = first.ends_with("ed") && w.get(1).is_some_and(|s| ARTICLES.contains(&s.as_str()));
    let complete = w.len() >= 3 && !PRONOUNS.contains(&first) && !DEMONSTRATIVES.contains(&first) && !fragment_verb;
    let utility = keywords(atom).len() >= 3;
    let lower = atom.to_lowercase();
    let factual = !META_MARKERS.iter().any(|m| lower.contains(m));
    [complete, utility, factual]
}

fn is_clear(question: &str) -> bool {
    let w = words(question);
    if w.iter().any(|x| PRONOUNS.contains(&x.as_str())) {
        return false;
    }
    if w.first().is_some_and(|f| DEMONSTRATIVES.contains(&f.as_str())) {
        return false;
    }
    !(w.iter().any(|x| COMPARATIVES.contains(&x.as_str())) && !w.iter().any(|x| x == "than"))
}

fn has_leading_statement(question: &str) -> bool {
    let sentences = RuleSentenceSplitter.sentences(question);
    sentences.len() > 1 && sentences[..sentences.len() - 1].iter().any(|s| s.trim_end().ends_with('.'))
}

fn heuristic(criterion: &str, text: &str) -> f64 {
    let w = words(text);
    let n = w.len().max(1) as f64;
    let kw = keywords(text).len() as f64;
    let tokens: Vec<&str> = text.split_whitespace().collect();
    let specific = tokens
        .iter()
        .skip(1)
        .filter(|t| t.chars().next().is_some_and(|c| c.is_uppercase() || c.is_ascii_digit()))
        .count() as f64;
    let [complete, utility, factual] = validity(text);
    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    let length_fit = 1.0 / (1.0 + (n - 14.0).abs() / 14.0);
    match criterion {
        "validity" => 0.5 * (kw / 6.0).min(1.0) + 0.25 * flag(utility) + 0.25 * flag(factual),
        "completeness" => 0.6 * flag(complete) + 0.4 * flag(text.trim_end().ends_with(['.', '!', '?'])),
        "specificity" => (specific / 3.0).min(1.0),
        "clarity" => 0.5 * flag(is_clear(text)) + 0.5 * length_fit,
        "questionability" => 0.5 * (specific / 2.0).min(1.0) + 0.5 * length_fit,
        "connectivity" => (kw / 5.0).min(1.0),
        "fluency" => 0.5 * length_fit + 0.5 * flag(text.contains('?') && !has_leading_statement(text)),
        "essentiality" => (kw / n).min(1.0),
        "vanilla" => {
            ["validity", "completeness", "specificity", "clarity", "questionability"]
                .iter()
                .map(|c| heuristic(c, text))
                .sum::<f64>()
                / 5.0
        }
        _ => 0.5,
    }
}

fn select_connected(pool: &[(String, String)], m: usize) -> Vec<String> {
    if pool.is_empty() {
        return Vec::new();
    }
    let vecs: Vec<Vec<f64>> = pool.iter().map(|(_, t)| mock_embedding(t, "select", 64)).collect();
    let mut chosen = vec![0usize];
    while chosen.len() < m.min(pool.len()) {
        let best = (0..pool.len())
            .filter(|i| !chosen.contains(i))
            .map(|i| {
                let closeness: f64 = chosen.iter().map(|&c| super::cosine(&vecs[i], &vecs[c])).sum();
                (i, closeness)
            })
            .fold(None, |acc: Option<(usize, f64)>, (i, s)| match acc {
                Some((_, best)) if best >= s => acc,
                _ => Some((i, s)),
            });
        match best {
            Some((i, _)) => chosen.push(i),
            None => break,
        }
    }
    chosen.iter().map(|&i| pool[i].0.clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extraction_splits_sentences_and_compounds() {
        let atoms = extract("Tesla builds cars in Austin, and The plant opened in 2022. It is large.");
        assert_eq!(atoms, vec!["Tesla builds cars in Austin.", "The plant opened in 2022.", "It is large."]);
        assert_eq!(extract("Salt, and pepper are spices."), vec!["Salt, and pepper are spices."]);
    }

    #[test]
    fn validity_rules() {
        assert_eq!(validity("Albert Einstein published special relativity in 1905."), [true, true, true]);
        assert!(!validity("Discovered the theory of relativity.")[0]);
        assert!(!validity("It was founded in 1901 by engineers.")[0]);
        assert!(!validity("The document title is tesla_2023.pdf.")[2]);
        assert!(!validity("Water is wet.")[1]);
    }

    #[test]
    fn clarity_rules() {
        assert!(is_clear("How are Tesla, Austin related?"));
        assert!(!is_clear("When did they move?"));
        assert!(!is_clear("Which plant is larger?"));
        assert!(is_clear("Is Austin larger than Dallas?"));
    }

    #[test]
    fn leading_statement_detected() {
        assert!(has_leading_statement("Tesla moved to Austin. Why did Tesla move?"));
        assert!(!has_leading_statement("Why did Tesla move to Austin?"));
    }

    #[test]
    fn embeddings_are_unit_and_keyword_sensitive() {
        let a = mock_embedding("Water boils at 100C at sea level.", "m", 256);
        let b = mock_embedding("Water boils at 100C at sea level.", "m", 256);
        let c = mock_embedding("Sea level water boils at 100C quickly.", "m", 256);
        let d = mock_embedding("Mozart composed operas in Vienna.", "m", 256);
        assert_eq!(a, b);
        let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
        let (ac, ad) = (super::super::cosine(&a, &c), super::super::cosine(&a, &d));
        assert!(ac > 0.5, "related {ac}");
        assert!(ad < 0.5, "unrelated {ad}");
    }

    #[test]
    fn select_connected_single_picks_first() {
        let pool = vec![("A1".to_string(), "x y z".to_string()), ("A2".to_string(), "p q r".to_string())];
        assert_eq!(select_connected(&pool, 1), vec!["A1"]);
        assert_eq!(select_connected(&pool, 2).len(), 2);
    }

    #[test]
    fn learn_fraction_is_roughly_pct() {
        let ids: Vec<String> = (0..2000).map(|i| format!("item-{i}")).collect();
        let mut rules = MockRules::default();
        rules.learn_fraction(ids.iter().map(|id| (id.as_str(), id.as_str(), "a")), 30.0);
        let share = rules.knowledge.len() as f64 / 2000.0;
        assert!((share - 0.30).abs() < 0.04, "{share}");
    }
}
