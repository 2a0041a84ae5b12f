//! Multi-hop question generation: pool sampling, connected evidence
//! selection, candidate generation, zero-tolerance logical filtering,
//! multi-criteria ranking and item assembly.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::atomics::{AtomicUnit, ValidInformationPool};
use crate::crrf::{rrf_fuse, RankingSet, QUESTION_CRITERIA};
use crate::gateway::{ids, Gateway, GatewayError, Payload, Verdict};
use crate::redundancy::{gold_group, EquivalenceMap};
use crate::text::digest_u64;

pub const FILTER_CRITERIA: [&str; 5] = [
    "contextual_independence",
    "answer_exclusion",
    "information_equivalence",
    "question_clarity",
    "answerability",
];

const FILTER_TEMPLATES: [&str; 5] = [
    ids::FILTER_CONTEXTUAL_INDEPENDENCE,
    ids::FILTER_ANSWER_EXCLUSION,
    ids::FILTER_INFORMATION_EQUIVALENCE,
    ids::FILTER_QUESTION_CLARITY,
    ids::FILTER_ANSWERABILITY,
];

const RANK_TEMPLATES: [&str; 4] = [
    ids::RANK_QUESTION_CONNECTIVITY,
    ids::RANK_QUESTION_FLUENCY,
    ids::RANK_QUESTION_ESSENTIALITY,
    ids::RANK_QUESTION_VALIDITY,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QgenConfig {
    /// Atoms drawn from the pool per sample (N).
    pub pool_sample: usize,
    /// Candidate questions per sample (S).
    pub candidates: usize,
    /// Hop depths to generate (M).
    pub hops: Vec<usize>,
    pub samples_per_hop: usize,
}

impl Default for QgenConfig {
    fn default() -> Self {
        Self { pool_sample: 100, candidates: 10, hops: vec![1, 2, 3, 4], samples_per_hop: 300 }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum QgenError {
    #[error("the valid information pool is empty")]
    EmptyPool,
    #[error("hop depth must be in 1..=4, got {0}")]
    InvalidHop(usize),
    #[error("sample of {available} atoms is smaller than hop depth {hop}")]
    SampleTooSmall { available: usize, hop: usize },
    #[error("no surviving candidates")]
    NoSurvivors,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionRank {
    pub criterion_ranks: BTreeMap<String, usize>,
    pub crrf_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionCandidate {
    pub cand_id: String,
    pub sample_id: String,
    pub text: String,
    pub hop: usize,
    pub evidence_atom_ids: Vec<String>,
    #[serde(default)]
    pub filter_verdicts: Vec<Verdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<QuestionRank>,
    #[serde(default)]
    pub winner: bool,
}

impl QuestionCandidate {
    pub fn survives(&self) -> bool {
        self.filter_verdicts.len() == FILTER_CRITERIA.len() && self.filter_verdicts.iter().all(Verdict::passed)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkItem {
    pub item_id: String,
    pub question: String,
    pub answer: String,
    pub hop: usize,
    pub evidence_atom_ids: Vec<String>,
    pub gold_groups: Vec<BTreeSet<String>>,
    pub domain_tag: String,
}

impl BenchmarkItem {
    /// The same item with every group reduced to its origin chunk.
    pub fn naive(&self, origin_of: &HashMap<&str, &str>) -> BenchmarkItem {
        let mut item = self.clone();
        item.gold_groups = self
            .evidence_atom_ids
            .iter()
            .map(|a| BTreeSet::from([origin_of.get(a.as_str()).copied().unwrap_or_default().to_string()]))
            .collect();
        item
    }
}

/// Draws `min(n, |pool|)` atoms without replacement.
pub fn sample_pool<'a>(pool: &[&'a AtomicUnit], n: usize, seed: u64) -> Result<Vec<&'a AtomicUnit>, QgenError> {
    if pool.is_empty() {
        return Err(QgenError::EmptyPool);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(pool.choose_multiple(&mut rng, n.min(pool.len())).copied().collect())
}

fn evidence_payload(atoms: &[&AtomicUnit]) -> Value {
    Value::Array(atoms.iter().map(|a| json!({"id": a.atom_id, "text": a.text})).collect())
}

/// Asks the generator for exactly `m` connected atoms. The pool is shown
/// under labels `A1..An`; an invalid selection is re-asked once.
pub fn select_connected<'a>(gw: &Gateway, sample: &[&'a AtomicUnit], m: usize) -> Result<Vec<&'a AtomicUnit>, QgenError> {
    if !(1..=4).contains(&m) {
        return Err(QgenError::InvalidHop(m));
    }
    if sample.len() < m {
        return Err(QgenError::SampleTooSmall { available: sample.len(), hop: m });
    }
    let labels: Vec<String> = (1..=sample.len()).map(|i| format!("A{i}")).collect();
    let pool: Vec<Value> = labels.iter().zip(sample).map(|(l, a)| json!({"id": l, "text": a.text})).collect();
    let payload: Payload = [("pool".to_string(), Value::Array(pool)), ("m".to_string(), json!(m.to_string()))].into();
    let index: HashMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let picked = gw.ask(ids::SELECT_CONNECTED, &payload, |v| {
        let sel = v.get("selected").and_then(Value::as_array).ok_or("missing \"selected\" array")?;
        let mut out = Vec::new();
        for s in sel {
            let label = s.as_str().ok_or("selection is not a string")?;
            let i = *index.get(label).ok_or_else(|| format!("unknown label {label:?}"))?;
            if out.contains(&i) {
                return Err(format!("label {label:?} selected twice"));
            }
            out.push(i);
        }
        if out.len() != m {
            return Err(format!("expected {m} labels, got {}", out.len()));
        }
        Ok(out)
    })?;
    Ok(picked.into_iter().map(|i| sample[i]).collect())
}

pub fn generate_candidates(
    gw: &Gateway,
    sample_id: &str,
    evidence: &[&AtomicUnit],
    s: usize,
) -> Result<Vec<QuestionCandidate>, QgenError> {
    let payload: Payload = [("evidence".to_string(), evidence_payload(evidence)), ("n".to_string(), json!(s.to_string()))].into();
    let texts = gw.generate(ids::QUESTION_GENERATION, &payload, s)?;
    let evidence_atom_ids: Vec<String> = evidence.iter().map(|a| a.atom_id.clone()).collect();
    Ok(texts
        .into_iter()
        .enumerate()
        .map(|(i, text)| QuestionCandidate {
            cand_id: format!("{sample_id}-q{i:02}"),
            sample_id: sample_id.to_string(),
            text,
            hop: evidence.len(),
            evidence_atom_ids: evidence_atom_ids.clone(),
            filter_verdicts: Vec::new(),
            answer: None,
            rank: None,
            winner: false,
        })
        .collect())
}

/// Judges all five criteria (each always evaluated) and stores the verdicts
/// and the answerability answer on the candidate.
pub fn logical_filter(gw: &Gateway, cand: &mut QuestionCandidate, evidence: &[&AtomicUnit], chunks: &[(&str, &str)]) {
    let question = json!(cand.text);
    let ev = evidence_payload(evidence);
    let chunk_list = Value::Array(chunks.iter().map(|(id, t)| json!({"id": id, "text": t})).collect());
    let mut verdicts = Vec::with_capacity(FILTER_CRITERIA.len());
    for (template, criterion) in FILTER_TEMPLATES.iter().zip(FILTER_CRITERIA) {
        let mut payload: Payload = [("question".to_string(), question.clone())].into();
        match *template {
            ids::FILTER_ANSWER_EXCLUSION | ids::FILTER_INFORMATION_EQUIVALENCE => {
                payload.insert("evidence".into(), ev.clone());
            }
            ids::FILTER_ANSWERABILITY => {
                payload.insert("evidence".into(), ev.clone());
                payload.insert("chunks".into(), chunk_list.clone());
            }
            _ => {}
        }
        let verdict = if *template == ids::FILTER_ANSWERABILITY {
            match gw.judge_with_answer(template, &payload) {
                Ok((mut v, answer)) => {
                    if v.passed() && answer.is_none() {
                        v.outcome = crate::gateway::Outcome::Fail;
                        v.rationale = "answerable but no answer produced".into();
                    }
                    cand.answer = answer.filter(|_| v.passed());
                    v
                }
                Err(e) => Verdict::fail_by_error(criterion, &e),
            }
        } else {
            gw.judge(template, &payload).unwrap_or_else(|e| Verdict::fail_by_error(criterion, &e))
        };
        verdicts.push(Verdict { criterion_id: criterion.to_string(), ..verdict });
    }
    cand.filter_verdicts = verdicts;
}

/// Ranks survivors on the four question criteria and returns the index of
/// the fused winner (ties by cand_id). A single survivor wins without calls.
pub fn rank_questions(gw: &Gateway, survivors: &mut [QuestionCandidate]) -> Result<usize, QgenError> {
    match survivors.len() {
        0 => return Err(QgenError::NoSurvivors),
        1 => {
            survivors[0].winner = true;
            return Ok(0);
        }
        _ => {}
    }
    let cands: Vec<(String, String)> = survivors.iter().map(|c| (c.cand_id.clone(), c.text.clone())).collect();
    let rankings = RANK_TEMPLATES
        .iter()
        .zip(QUESTION_CRITERIA)
        .map(|(t, c)| gw.rank_by_criterion(t, c, &cands).map(|o| o.ranking))
        .collect::<Result<Vec<_>, _>>()?;
    let set = RankingSet::new(cands.iter().map(|c| c.0.clone()).collect(), rankings)
        .map_err(|e| GatewayError::InvalidRequest(e.to_string()))?;
    let fused = rrf_fuse(&set);
    for c in survivors.iter_mut() {
        c.rank = Some(QuestionRank {
            criterion_ranks: set.per_criterion().iter().map(|r| (r.criterion_id.clone(), r.ranks()[c.cand_id.as_str()])).collect(),
            crrf_score: fused.scores[&c.cand_id],
        });
    }
    let best = survivors.iter().position(|c| c.cand_id == fused.order[0]).expect("winner is a survivor");
    survivors[best].winner = true;
    Ok(best)
}

pub fn assemble_item(item_id: &str, winner: &QuestionCandidate, evidence: &[&AtomicUnit], map: &EquivalenceMap) -> BenchmarkItem {
    BenchmarkItem {
        item_id: item_id.to_string(),
        question: winner.text.clone(),
        answer: winner.answer.clone().unwrap_or_default(),
        hop: evidence.len(),
        evidence_atom_ids: evidence.iter().map(|a| a.atom_id.clone()).collect(),
        gold_groups: evidence.iter().map(|a| gold_group(a, map)).collect(),
        domain_tag: evidence.first().map(|a| a.domain_tag.clone()).unwrap_or_default(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleStatus {
    Retained,
    NoSurvivor,
    SelectionFailed,
    GenerationFailed,
    RankingFailed,
    TooSmall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: String,
    pub domain: String,
    pub hop: usize,
    pub status: SampleStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenStatsRow {
    pub domain: String,
    pub hop: usize,
    pub samples: usize,
    pub retained: usize,
    pub success_rate: f64,
    pub candidates: usize,
    /// Percentage of evaluated candidates passing each criterion.
    pub pass_rates: BTreeMap<String, f64>,
    pub all_pass_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub rows: Vec<GenStatsRow>,
}

fn pct(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        100.0 * n as f64 / d as f64
    }
}

/// Per (domain, hop) rates plus an `all` domain row per hop.
pub fn generation_stats(samples: &[SampleRecord], candidates: &[QuestionCandidate]) -> GenerationStats {
    let sample_domain: HashMap<&str, &str> = samples.iter().map(|s| (s.sample_id.as_str(), s.domain.as_str())).collect();
    let mut keys: BTreeSet<(String, usize)> = BTreeSet::new();
    for s in samples {
        keys.insert((s.domain.clone(), s.hop));
        keys.insert(("all".into(), s.hop));
    }
    let rows = keys
        .into_iter()
        .map(|(domain, hop)| {
            let in_scope = |d: &str| domain == "all" || d == domain;
            let ss: Vec<&SampleRecord> = samples.iter().filter(|s| s.hop == hop && in_scope(&s.domain)).collect();
            let cs: Vec<&QuestionCandidate> = candidates
                .iter()
                .filter(|c| c.hop == hop && sample_domain.get(c.sample_id.as_str()).is_some_and(|d| in_scope(d)))
                .collect();
            let retained = ss.iter().filter(|s| s.status == SampleStatus::Retained).count();
            let pass_rates = FILTER_CRITERIA
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    let passed = cs.iter().filter(|q| q.filter_verdicts.get(i).is_some_and(Verdict::passed)).count();
                    (c.to_string(), pct(passed, cs.len()))
                })
                .collect();
            GenStatsRow {
                samples: ss.len(),
                retained,
                success_rate: pct(retained, ss.len()),
                candidates: cs.len(),
                pass_rates,
                all_pass_rate: pct(cs.iter().filter(|q| q.survives()).count(), cs.len()),
                domain,
                hop,
            }
        })
        .collect();
    GenerationStats { rows }
}

#[derive(Debug, Clone)]
pub struct GenerationRun {
    pub samples: Vec<SampleRecord>,
    pub candidates: Vec<QuestionCandidate>,
    pub items: Vec<BenchmarkItem>,
    pub stats: GenerationStats,
}

/// Seed for one (domain, hop, sample) draw.
pub fn sample_seed(seed: u64, domain: &str, hop: usize, sample: usize) -> u64 {
    digest_u64(&[&seed.to_le_bytes(), domain.as_bytes(), &(hop as u64).to_le_bytes(), &(sample as u64).to_le_bytes()])
}

struct SampleOut {
    record: SampleRecord,
    candidates: Vec<QuestionCandidate>,
    item: Option<BenchmarkItem>,
}

#[allow(clippy::too_many_arguments)]
fn run_sample(
    gw: &Gateway,
    pool: &[&AtomicUnit],
    chunk_text: &HashMap<&str, &str>,
    map: &EquivalenceMap,
    config: &QgenConfig,
    domain: &str,
    hop: usize,
    index: usize,
    seed: u64,
) -> SampleOut {
    let sample_id = format!("{domain}-m{hop}-{index:04}");
    let record = |status, detail: Option<String>| SampleRecord {
        sample_id: sample_id.clone(),
        domain: domain.to_string(),
        hop,
        status,
        detail,
    };
    let fail = |status, detail: String| SampleOut { record: record(status, Some(detail)), candidates: Vec::new(), item: None };

    let sample = match sample_pool(pool, config.pool_sample, sample_seed(seed, domain, hop, index)) {
        Ok(s) if s.len() >= hop => s,
        Ok(s) => return fail(SampleStatus::TooSmall, format!("{} atoms for hop {hop}", s.len())),
        Err(e) => return fail(SampleStatus::TooSmall, e.to_string()),
    };
    let evidence = match select_connected(gw, &sample, hop) {
        Ok(t) => t,
        Err(e) => return fail(SampleStatus::SelectionFailed, e.to_string()),
    };
    let mut candidates = match generate_candidates(gw, &sample_id, &evidence, config.candidates) {
        Ok(c) => c,
        Err(e) => return fail(SampleStatus::GenerationFailed, e.to_string()),
    };
    let mut origin: Vec<&str> = Vec::new();
    for a in &evidence {
        if !origin.contains(&a.chunk_id.as_str()) {
            origin.push(&a.chunk_id);
        }
    }
    let chunks: Vec<(&str, &str)> = origin.iter().map(|c| (*c, chunk_text.get(c).copied().unwrap_or(""))).collect();
    for c in candidates.iter_mut() {
        logical_filter(gw, c, &evidence, &chunks);
    }
    let mut survivors: Vec<QuestionCandidate> = candidates.iter().filter(|c| c.survives()).cloned().collect();
    if survivors.is_empty() {
        return SampleOut { record: record(SampleStatus::NoSurvivor, None), candidates, item: None };
    }
    let best = match rank_questions(gw, &mut survivors) {
        Ok(b) => b,
        Err(e) => return SampleOut { record: record(SampleStatus::RankingFailed, Some(e.to_string())), candidates, item: None },
    };
    let ranked: HashMap<String, QuestionCandidate> = survivors.iter().map(|c| (c.cand_id.clone(), c.clone())).collect();
    for c in candidates.iter_mut() {
        if let Some(r) = ranked.get(&c.cand_id) {
            *c = r.clone();
        }
    }
    let item = assemble_item(&sample_id, &survivors[best], &evidence, map);
    SampleOut { record: record(SampleStatus::Retained, None), candidates, item: Some(item) }
}

/// Generates items for every domain in the pool, `samples_per_hop` samples
/// for each configured hop depth, in parallel. Output order is by domain,
/// then hop, then sample index.
pub fn run_generation(
    gw: &Gateway,
    pool: &ValidInformationPool,
    chunk_text: &HashMap<&str, &str>,
    map: &EquivalenceMap,
    config: &QgenConfig,
    seed: u64,
) -> Result<GenerationRun, QgenError> {
    if pool.is_empty() {
        return Err(QgenError::EmptyPool);
    }
    if let Some(&bad) = config.hops.iter().find(|h| !(1..=4).contains(*h)) {
        return Err(QgenError::InvalidHop(bad));
    }
    let domains: BTreeSet<&str> = pool.atoms.iter().map(|a| a.domain_tag.as_str()).collect();
    let per_domain: BTreeMap<&str, Vec<&AtomicUnit>> =
        domains.iter().map(|d| (*d, pool.atoms.iter().filter(|a| a.domain_tag == *d).collect())).collect();
    let tasks: Vec<(&str, usize, usize)> = domains
        .iter()
        .flat_map(|d| config.hops.iter().flat_map(move |&h| (0..config.samples_per_hop).map(move |i| (*d, h, i))))
        .collect();
    let outs: Vec<SampleOut> = tasks
        .par_iter()
        .map(|&(d, h, i)| run_sample(gw, &per_domain[d], chunk_text, map, config, d, h, i, seed))
        .collect();

    let mut run = GenerationRun { samples: Vec::new(), candidates: Vec::new(), items: Vec::new(), stats: GenerationStats { rows: Vec::new() } };
    let mut seen_questions = HashSet::new();
    for o in outs {
        run.samples.push(o.record);
        run.candidates.extend(o.candidates);
        if let Some(item) = o.item {
            if seen_questions.insert(item.question.clone()) {
                run.items.push(item);
            }
        }
    }
    run.stats = generation_stats(&run.samples, &run.candidates);
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::mock::Scripted;
    use crate::gateway::{MockBackend, MockRules, Outcome};
    use std::sync::Arc;

    fn atom(id: &str, chunk: &str, text: &str) -> AtomicUnit {
        AtomicUnit {
            atom_id: id.into(),
            chunk_id: chunk.into(),
            domain_tag: "wiki".into(),
            text: text.into(),
            validity: Vec::new(),
            criterion_ranks: None,
            crrf_score: None,
            selected: true,
        }
    }

    fn atoms(n: usize) -> Vec<AtomicUnit> {
        (0..n).map(|i| atom(&format!("a{i}"), &format!("c{}", i / 3), &format!("Fact {i} about Lisbon harbour cranes."))).collect()
    }

    #[test]
    fn sample_clamps_and_is_deterministic() {
        let all = atoms(50);
        let refs: Vec<&AtomicUnit> = all.iter().collect();
        assert_eq!(sample_pool(&refs, 100, 42).unwrap().len(), 50);
        let big = atoms(1000);
        let big_refs: Vec<&AtomicUnit> = big.iter().collect();
        let ids = |v: Vec<&AtomicUnit>| v.iter().map(|a| a.atom_id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(sample_pool(&big_refs, 100, 42).unwrap()), ids(sample_pool(&big_refs, 100, 42).unwrap()));
        assert_ne!(ids(sample_pool(&big_refs, 100, 42).unwrap()), ids(sample_pool(&big_refs, 100, 43).unwrap()));
        assert!(matches!(sample_pool(&[], 10, 1), Err(QgenError::EmptyPool)));
    }

    #[test]
    fn select_one_picks_first() {
        let gw = Gateway::mock(42);
        let all = atoms(5);
        let refs: Vec<&AtomicUnit> = all.iter().collect();
        let t = select_connected(&gw, &refs, 1).unwrap();
        assert_eq!(t[0].atom_id, "a0");
        assert_eq!(select_connected(&gw, &refs, 4).unwrap().len(), 4);
        assert!(matches!(select_connected(&gw, &refs, 5), Err(QgenError::InvalidHop(5))));
    }

    #[test]
    fn select_wrong_count_reasked_then_skipped() {
        let backend = Arc::new(MockBackend::new(MockRules::default()));
        let gw = Gateway::builder(Box::new(backend.clone())).build();
        let all = atoms(6);
        let refs: Vec<&AtomicUnit> = all.iter().collect();
        let five = r#"{"selected": ["A1", "A2", "A3", "A4", "A5"]}"#.to_string();
        backend.script(ids::SELECT_CONNECTED, vec![Scripted::Text(five.clone()), Scripted::Text(five.clone())]);
        assert!(matches!(select_connected(&gw, &refs, 4), Err(QgenError::Gateway(GatewayError::Parse { .. }))));
        backend.script(ids::SELECT_CONNECTED, vec![Scripted::Text(five)]);
        assert_eq!(select_connected(&gw, &refs, 4).unwrap().len(), 4);
    }

    #[test]
    fn candidates_share_evidence() {
        let gw = Gateway::mock(42);
        let all = atoms(3);
        let refs: Vec<&AtomicUnit> = all.iter().collect();
        let cands = generate_candidates(&gw, "s", &refs[..2], 10).unwrap();
        assert_eq!(cands.len(), 10);
        assert!(cands.iter().all(|c| c.evidence_atom_ids == vec!["a0", "a1"] && c.hop == 2));
        let distinct: HashSet<&str> = cands.iter().map(|c| c.text.as_str()).collect();
        assert_eq!(distinct.len(), 10);
    }

    fn candidate(text: &str, evidence: &[&AtomicUnit]) -> QuestionCandidate {
        QuestionCandidate {
            cand_id: "x".into(),
            sample_id: "s".into(),
            text: text.into(),
            hop: evidence.len(),
            evidence_atom_ids: evidence.iter().map(|a| a.atom_id.clone()).collect(),
            filter_verdicts: Vec::new(),
            answer: None,
            rank: None,
            winner: false,
        }
    }

    fn outcomes(c: &QuestionCandidate) -> Vec<Outcome> {
        c.filter_verdicts.iter().map(|v| v.outcome).collect()
    }

    #[test]
    fn filter_examples() {
        use Outcome::{Fail, Pass};
        let gw = Gateway::mock(42);
        let curie = atom("a", "c1", "Marie Curie worked at the University of Paris.");
        let founded = atom("b", "c2", "The University of Paris was established around 1150.");
        let ev = [&curie, &founded];
        let chunks = [("c1", curie.text.as_str()), ("c2", founded.text.as_str())];

        let mut good = candidate("When was the university where Marie Curie worked established in Paris?", &ev);
        logical_filter(&gw, &mut good, &ev, &chunks);
        assert_eq!(outcomes(&good), vec![Pass; 5]);
        assert_eq!(good.answer.as_deref(), Some("Marie Curie worked at the University of Paris. The University of Paris was established around 1150."));

        let mut doc_ref = candidate("Based on the document provided, what are the primary renewable energy sources?", &ev);
        logical_filter(&gw, &mut doc_ref, &ev, &chunks);
        assert_eq!(doc_ref.filter_verdicts[0].outcome, Fail);

        let mut leak = candidate(
            "Marie Curie worked at the University of Paris. When was the University of Paris established?",
            &ev,
        );
        logical_filter(&gw, &mut leak, &ev, &chunks);
        assert_eq!(leak.filter_verdicts[1].outcome, Fail);

        let third = atom("c", "c3", "Gdansk shipyards employed welders from Sopot.");
        let ev3 = [&curie, &founded, &third];
        let mut overflow = candidate("Where did Marie Curie work?", &ev3);
        logical_filter(&gw, &mut overflow, &ev3, &chunks);
        assert_eq!(overflow.filter_verdicts[2].outcome, Fail);

        let mut vague = candidate("When was their university established?", &ev);
        logical_filter(&gw, &mut vague, &ev, &chunks);
        assert_eq!(vague.filter_verdicts[3].outcome, Fail);
    }

    #[test]
    fn filter_gateway_error_fails_with_flag() {
        let backend = Arc::new(MockBackend::new(MockRules::default()));
        let gw = Gateway::builder(Box::new(backend.clone())).build();
        backend.script(ids::FILTER_QUESTION_CLARITY, vec![Scripted::Text("?".into()), Scripted::Text("?".into())]);
        let a = atom("a", "c1", "Marie Curie worked at the University of Paris.");
        let mut c = candidate("Where did Marie Curie work in Paris?", &[&a]);
        logical_filter(&gw, &mut c, &[&a], &[("c1", a.text.as_str())]);
        assert!(c.filter_verdicts[3].by_error);
        assert!(!c.survives());
        assert_eq!(c.filter_verdicts.len(), 5);
    }

    #[test]
    fn single_survivor_wins_without_calls() {
        let gw = Gateway::mock(1);
        let a = atom("a", "c", "x y z");
        let mut s = vec![candidate("Q?", &[&a])];
        assert_eq!(rank_questions(&gw, &mut s).unwrap(), 0);
        assert!(s[0].winner);
        assert_eq!(gw.cost_report().total.calls, 0);
        assert!(matches!(rank_questions(&gw, &mut []), Err(QgenError::NoSurvivors)));
    }

    #[test]
    fn ranking_winner_matches_hand_rrf_and_tie_break() {
        let texts = ["Question one?", "Question two?", "Question three?"];
        // connectivity [1,0,2], fluency [0,1,2], essentiality [2,1,0], validity [0,2,1]
        let orders = [[1, 0, 2], [0, 1, 2], [2, 1, 0], [0, 2, 1]];
        let mut rules = MockRules::default();
        for (criterion, order) in QUESTION_CRITERIA.iter().zip(orders) {
            for (pos, &q) in order.iter().enumerate() {
                rules.score_overrides.insert((criterion.to_string(), texts[q].to_string()), 0.9 - 0.2 * pos as f64);
            }
        }
        let gw = Gateway::builder(Box::new(MockBackend::new(rules))).build();
        let a = atom("a", "c", "x y z");
        let mut s: Vec<QuestionCandidate> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| QuestionCandidate { cand_id: format!("q{i}"), ..candidate(t, &[&a]) })
            .collect();
        // q0 = 1/2+1+1/3+1 = 2.833, q1 = 1+1/2+1/2+1/3 = 2.333, q2 = 1/3+1/3+1+1/2 = 2.167
        assert_eq!(rank_questions(&gw, &mut s).unwrap(), 0);
        assert!((s[0].rank.as_ref().unwrap().crrf_score - (0.5 + 1.0 + 1.0 / 3.0 + 1.0)).abs() < 1e-12);

        // two candidates with mirrored ranks tie; the smaller id wins
        let mut rules = MockRules::default();
        for (k, criterion) in QUESTION_CRITERIA.iter().enumerate() {
            let (hi, lo) = if k % 2 == 0 { (texts[0], texts[1]) } else { (texts[1], texts[0]) };
            rules.score_overrides.insert((criterion.to_string(), hi.to_string()), 0.9);
            rules.score_overrides.insert((criterion.to_string(), lo.to_string()), 0.1);
        }
        let gw = Gateway::builder(Box::new(MockBackend::new(rules))).build();
        let mut s: Vec<QuestionCandidate> = [("qb", texts[0]), ("qa", texts[1])]
            .iter()
            .map(|(id, t)| QuestionCandidate { cand_id: id.to_string(), ..candidate(t, &[&a]) })
            .collect();
        assert_eq!(rank_questions(&gw, &mut s).unwrap(), 1);
    }

    #[test]
    fn assembled_groups_follow_map() {
        let a = atom("a", "c1", "x");
        let b = atom("b", "c2", "y");
        let map = EquivalenceMap { entries: [("a".to_string(), BTreeMap::from([("z".to_string(), "cX".to_string())]))].into() };
        let winner = QuestionCandidate { answer: Some("ans".into()), ..candidate("Q?", &[&a, &b]) };
        let item = assemble_item("i", &winner, &[&a, &b], &map);
        assert_eq!(item.hop, 2);
        assert_eq!(item.gold_groups[0], BTreeSet::from(["c1".to_string(), "cX".to_string()]));
        assert_eq!(item.gold_groups[1], BTreeSet::from(["c2".to_string()]));
        let empty = assemble_item("i", &winner, &[&a, &b], &EquivalenceMap::default());
        assert!(empty.gold_groups.iter().all(|g| g.len() == 1));
    }

    #[test]
    fn stats_match_hand_tally() {
        let v = |ok: bool| Verdict {
            outcome: if ok { Outcome::Pass } else { Outcome::Fail },
            rationale: String::new(),
            criterion_id: String::new(),
            by_error: false,
        };
        let a = atom("a", "c", "x");
        let mk = |sample: &str, fails: Option<usize>| QuestionCandidate {
            sample_id: sample.into(),
            filter_verdicts: (0..5).map(|i| v(Some(i) != fails)).collect(),
            ..candidate("q", &[&a])
        };
        let samples = vec![
            SampleRecord { sample_id: "s1".into(), domain: "d".into(), hop: 1, status: SampleStatus::Retained, detail: None },
            SampleRecord { sample_id: "s2".into(), domain: "d".into(), hop: 1, status: SampleStatus::NoSurvivor, detail: None },
        ];
        let cands = vec![mk("s1", None), mk("s1", Some(2)), mk("s2", Some(2)), mk("s2", Some(4))];
        let stats = generation_stats(&samples, &cands);
        let row = stats.rows.iter().find(|r| r.domain == "d").unwrap();
        assert_eq!((row.samples, row.retained, row.candidates), (2, 1, 4));
        assert_eq!(row.success_rate, 50.0);
        assert_eq!(row.pass_rates["information_equivalence"], 50.0);
        assert_eq!(row.pass_rates["answerability"], 75.0);
        assert_eq!(row.all_pass_rate, 25.0);
    }
}
