//! Cross-chunk factual equivalence, corpus overlap statistics and gold-group
//! expansion.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::atomics::AtomicUnit;
use crate::corpus::Chunk;
use crate::gateway::{cosine, ids, EmbeddingVector, Gateway, GatewayError, Outcome, Payload, Verdict};

pub const DEFAULT_TAU: f64 = 0.5;
/// Candidates judged per prompt.
pub const JUDGE_BATCH: usize = 16;

#[derive(Debug, thiserror::Error)]
pub enum RedundancyError {
    #[error("no embedding for atom {0}; embed every atom before searching")]
    MissingEmbedding(String),
    #[error("similarity needs at least 2 chunks, got {0}")]
    TooFewChunks(usize),
    #[error("redundancy is undefined for an empty target set")]
    NoTargets,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub atom_id: String,
    pub chunk_id: String,
    pub cosine: f64,
}

/// Atoms from other chunks whose cosine with the target is at least `tau`,
/// best first (ties by atom id).
pub fn candidate_search(
    target: &AtomicUnit,
    all_atoms: &[AtomicUnit],
    embeddings: &HashMap<String, EmbeddingVector>,
    tau: f64,
) -> Result<Vec<SearchHit>, RedundancyError> {
    let t = embeddings.get(&target.atom_id).ok_or_else(|| RedundancyError::MissingEmbedding(target.atom_id.clone()))?;
    let mut hits = Vec::new();
    for a in all_atoms.iter().filter(|a| a.chunk_id != target.chunk_id) {
        let e = embeddings.get(&a.atom_id).ok_or_else(|| RedundancyError::MissingEmbedding(a.atom_id.clone()))?;
        let c = t.cosine(e);
        if c >= tau {
            hits.push(SearchHit { atom_id: a.atom_id.clone(), chunk_id: a.chunk_id.clone(), cosine: c });
        }
    }
    hits.sort_by(|a, b| b.cosine.total_cmp(&a.cosine).then_with(|| a.atom_id.cmp(&b.atom_id)));
    Ok(hits)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairVerdict {
    pub candidate_id: String,
    pub chunk_id: String,
    pub cosine: f64,
    pub verdict: Verdict,
}

/// Judges each candidate against the target (in batches of
/// [`JUDGE_BATCH`]). A failed batch marks its pairs Fail-by-error.
pub fn verify_equivalence(
    gw: &Gateway,
    target: &AtomicUnit,
    candidates: &[SearchHit],
    texts: &HashMap<&str, &str>,
) -> Vec<PairVerdict> {
    let mut out = Vec::with_capacity(candidates.len());
    for batch in candidates.chunks(JUDGE_BATCH) {
        let items: Vec<serde_json::Value> = batch
            .iter()
            .enumerate()
            .map(|(i, h)| json!({"id": format!("C{}", i + 1), "text": texts.get(h.atom_id.as_str()).copied().unwrap_or("")}))
            .collect();
        let payload: Payload = [("target".to_string(), json!(target.text)), ("candidates".to_string(), json!(items))].into();
        let verdicts = match gw.judge_list(ids::REDUNDANCY_JUDGE, &payload, batch.len()) {
            Ok(v) => v,
            Err(e) => batch.iter().map(|_| Verdict::fail_by_error("equivalence", &e)).collect(),
        };
        out.extend(batch.iter().zip(verdicts).map(|(h, mut verdict)| {
            verdict.criterion_id = "equivalence".into();
            PairVerdict { candidate_id: h.atom_id.clone(), chunk_id: h.chunk_id.clone(), cosine: h.cosine, verdict }
        }));
    }
    out
}

/// Target atom id -> equivalent atom id -> the equivalent's chunk id.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EquivalenceMap {
    pub entries: BTreeMap<String, BTreeMap<String, String>>,
}

impl EquivalenceMap {
    pub fn equivalents(&self, target: &str) -> Option<&BTreeMap<String, String>> {
        self.entries.get(target)
    }

    pub fn has_equivalent(&self, target: &str) -> bool {
        self.entries.get(target).is_some_and(|e| !e.is_empty())
    }

    /// Adds `b -> a` for every `a -> b` where `b` is itself a target.
    pub fn symmetrized(&self, chunk_of: &HashMap<&str, &str>) -> Self {
        let mut out = self.clone();
        for (t, eqs) in &self.entries {
            for e in eqs.keys() {
                if let (Some(reverse), Some(chunk)) = (out.entries.get_mut(e.as_str()), chunk_of.get(t.as_str())) {
                    reverse.insert(t.clone(), chunk.to_string());
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceRecord {
    pub target_id: String,
    pub target_chunk: String,
    pub equivalents: Vec<String>,
    pub pairs: Vec<PairVerdict>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RedundancyConfig {
    pub tau: f64,
    pub embedding_model: String,
    pub symmetrize: bool,
}

impl Default for RedundancyConfig {
    fn default() -> Self {
        Self { tau: DEFAULT_TAU, embedding_model: "text-embedding-3-large".into(), symmetrize: false }
    }
}

#[derive(Debug, Clone)]
pub struct Tracked {
    pub records: Vec<EquivalenceRecord>,
    pub map: EquivalenceMap,
}

pub fn embed_atoms(gw: &Gateway, atoms: &[AtomicUnit], model: &str) -> Result<HashMap<String, EmbeddingVector>, GatewayError> {
    if atoms.is_empty() {
        return Ok(HashMap::new());
    }
    let texts: Vec<String> = atoms.iter().map(|a| a.text.clone()).collect();
    let vectors = gw.embed(&texts, model)?;
    Ok(atoms.iter().map(|a| a.atom_id.clone()).zip(vectors).collect())
}

/// Candidate search and judge verification for every target; one record per
/// target, in target order.
pub fn track(
    gw: &Gateway,
    targets: &[AtomicUnit],
    all_atoms: &[AtomicUnit],
    config: &RedundancyConfig,
) -> Result<Tracked, RedundancyError> {
    let embeddings = embed_atoms(gw, all_atoms, &config.embedding_model)?;
    let texts: HashMap<&str, &str> = all_atoms.iter().map(|a| (a.atom_id.as_str(), a.text.as_str())).collect();
    let records: Vec<EquivalenceRecord> = targets
        .par_iter()
        .map(|t| {
            let hits = candidate_search(t, all_atoms, &embeddings, config.tau)?;
            let pairs = verify_equivalence(gw, t, &hits, &texts);
            Ok(EquivalenceRecord {
                target_id: t.atom_id.clone(),
                target_chunk: t.chunk_id.clone(),
                equivalents: pairs.iter().filter(|p| p.verdict.outcome == Outcome::Pass).map(|p| p.candidate_id.clone()).collect(),
                pairs,
            })
        })
        .collect::<Result<_, RedundancyError>>()?;
    let mut map = EquivalenceMap {
        entries: records
            .iter()
            .map(|r| {
                let eqs = r
                    .pairs
                    .iter()
                    .filter(|p| p.verdict.outcome == Outcome::Pass)
                    .map(|p| (p.candidate_id.clone(), p.chunk_id.clone()))
                    .collect();
                (r.target_id.clone(), eqs)
            })
            .collect(),
    };
    if config.symmetrize {
        let chunk_of: HashMap<&str, &str> = all_atoms.iter().map(|a| (a.atom_id.as_str(), a.chunk_id.as_str())).collect();
        map = map.symmetrized(&chunk_of);
    }
    Ok(Tracked { records, map })
}

/// 100 × mean cosine over all distinct pairs.
pub fn similarity_stat(embeddings: &[Vec<f64>]) -> Result<f64, RedundancyError> {
    let n = embeddings.len();
    if n < 2 {
        return Err(RedundancyError::TooFewChunks(n));
    }
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            sum += cosine(&embeddings[i], &embeddings[j]);
        }
    }
    Ok(100.0 * sum / (n * (n - 1) / 2) as f64)
}

/// 100 × share of targets with at least one equivalent.
pub fn redundancy_stat<'a>(targets: impl IntoIterator<Item = &'a str>, map: &EquivalenceMap) -> Result<f64, RedundancyError> {
    let (mut total, mut redundant) = (0usize, 0usize);
    for t in targets {
        total += 1;
        redundant += usize::from(map.has_equivalent(t));
    }
    if total == 0 {
        return Err(RedundancyError::NoTargets);
    }
    Ok(100.0 * redundant as f64 / total as f64)
}

/// The origin chunk plus every chunk holding an equivalent.
pub fn gold_group(atom: &AtomicUnit, map: &EquivalenceMap) -> BTreeSet<String> {
    let mut group = BTreeSet::from([atom.chunk_id.clone()]);
    if let Some(eqs) = map.equivalents(&atom.atom_id) {
        group.extend(eqs.values().cloned());
    }
    group
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapRow {
    pub domain: String,
    pub similarity: Option<f64>,
    pub redundancy: Option<f64>,
    pub chunk_count: usize,
    pub target_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusOverlapStats {
    pub rows: Vec<OverlapRow>,
}

impl CorpusOverlapStats {
    /// Per-domain Sim and Red (`None` where undefined).
    pub fn compute(
        gw: &Gateway,
        chunks: &[Chunk],
        targets: &[AtomicUnit],
        map: &EquivalenceMap,
        embedding_model: &str,
    ) -> Result<Self, RedundancyError> {
        let domains: BTreeSet<&str> = chunks.iter().map(|c| c.domain_tag.as_str()).chain(targets.iter().map(|t| t.domain_tag.as_str())).collect();
        let mut rows = Vec::new();
        for domain in domains {
            let texts: Vec<String> = chunks.iter().filter(|c| c.domain_tag == domain).map(|c| c.text.clone()).collect();
            let similarity = if texts.len() >= 2 {
                let vecs: Vec<Vec<f64>> = gw.embed(&texts, embedding_model)?.into_iter().map(|e| e.values).collect();
                Some(similarity_stat(&vecs)?)
            } else {
                None
            };
            let ts: Vec<&str> = targets.iter().filter(|t| t.domain_tag == domain).map(|t| t.atom_id.as_str()).collect();
            let redundancy = redundancy_stat(ts.iter().copied(), map).ok();
            rows.push(OverlapRow { domain: domain.to_string(), similarity, redundancy, chunk_count: texts.len(), target_count: ts.len() });
        }
        Ok(Self { rows })
    }
}
