//! Atomic information units: extraction, minimal validity filtering and
//! per-chunk multi-criteria selection into the valid information pool.

use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::corpus::Chunk;
use crate::crrf::{rrf_fuse, RankingSet, ATOM_CRITERIA};
use crate::gateway::{ids, mock::VALIDITY_CRITERIA, Gateway, GatewayError, Payload, Verdict};

pub const DEFAULT_TOP_K: usize = 3;

const RANK_TEMPLATES: [&str; 5] = [
    ids::RANK_ATOM_VALIDITY,
    ids::RANK_ATOM_COMPLETENESS,
    ids::RANK_ATOM_SPECIFICITY,
    ids::RANK_ATOM_CLARITY,
    ids::RANK_ATOM_QUESTIONABILITY,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomicUnit {
    pub atom_id: String,
    pub chunk_id: String,
    pub domain_tag: String,
    pub text: String,
    #[serde(default)]
    pub validity: Vec<Verdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub criterion_ranks: Option<BTreeMap<String, usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crrf_score: Option<f64>,
    #[serde(default)]
    pub selected: bool,
}

impl AtomicUnit {
    /// All three minimal criteria judged and passed.
    pub fn is_valid(&self) -> bool {
        self.validity.len() == VALIDITY_CRITERIA.len() && self.validity.iter().all(Verdict::passed)
    }
}

pub fn atom_id(chunk_id: &str, ordinal: usize) -> String {
    format!("{chunk_id}-a{ordinal:03}")
}

/// Splits a chunk into atoms. Byte-identical texts within the chunk are kept
/// once.
pub fn extract_atoms(gw: &Gateway, chunk: &Chunk) -> Result<Vec<AtomicUnit>, GatewayError> {
    if chunk.text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let payload: Payload = [("chunk_text".to_string(), json!(chunk.text))].into();
    let texts = gw.ask(ids::ATOMIC_EXTRACTION, &payload, |v| {
        v.get("atoms")
            .and_then(Value::as_array)
            .ok_or_else(|| "missing \"atoms\" array".to_string())?
            .iter()
            .map(|a| a.as_str().map(|s| s.trim().to_string()).ok_or_else(|| "atom is not a string".to_string()))
            .collect::<Result<Vec<_>, _>>()
    })?;
    let mut seen = HashSet::new();
    Ok(texts
        .into_iter()
        .filter(|t| !t.is_empty() && seen.insert(t.clone()))
        .enumerate()
        .map(|(i, text)| AtomicUnit {
            atom_id: atom_id(&chunk.chunk_id, i),
            chunk_id: chunk.chunk_id.clone(),
            domain_tag: chunk.domain_tag.clone(),
            text,
            validity: Vec::new(),
            criterion_ranks: None,
            crrf_score: None,
            selected: false,
        })
        .collect())
}

/// Judges the three minimal criteria for every atom and stores the verdicts.
/// A gateway failure records Fail-by-error verdicts. Returns the indices of
/// atoms that passed all three.
pub fn filter_validity(gw: &Gateway, atoms: &mut [AtomicUnit]) -> Vec<usize> {
    for atom in atoms.iter_mut() {
        let payload: Payload = [("atom".to_string(), json!(atom.text))].into();
        atom.validity = match gw.judge_multi(ids::VALIDITY_FILTER, &payload, &VALIDITY_CRITERIA) {
            Ok(v) => v,
            Err(e) => VALIDITY_CRITERIA.iter().map(|c| Verdict::fail_by_error(c, &e)).collect(),
        };
    }
    atoms.iter().enumerate().filter(|(_, a)| a.is_valid()).map(|(i, _)| i).collect()
}

/// Ranks the atoms of one chunk on the five criteria, fuses the rankings and
/// marks the top `k` as selected. Fewer than two atoms are selected without
/// any call. Returns the number of repaired rankings.
pub fn rank_and_select(gw: &Gateway, atoms: &mut [AtomicUnit], k: usize) -> Result<usize, GatewayError> {
    if atoms.len() < 2 {
        for a in atoms.iter_mut() {
            a.selected = k > 0;
        }
        return Ok(0);
    }
    let candidates: Vec<(String, String)> = atoms.iter().map(|a| (a.atom_id.clone(), a.text.clone())).collect();
    let mut rankings = Vec::with_capacity(RANK_TEMPLATES.len());
    let mut repairs = 0;
    for (template, criterion) in RANK_TEMPLATES.iter().zip(ATOM_CRITERIA) {
        let out = gw.rank_by_criterion(template, criterion, &candidates)?;
        repairs += out.repairs;
        rankings.push(out.ranking);
    }
    let set = RankingSet::new(candidates.iter().map(|c| c.0.clone()).collect(), rankings)
        .map_err(|e| GatewayError::InvalidRequest(e.to_string()))?;
    let fused = rrf_fuse(&set);
    let selected: HashSet<&str> = fused.top(k).iter().map(String::as_str).collect();
    for a in atoms.iter_mut() {
        a.criterion_ranks = Some(
            set.per_criterion()
                .iter()
                .map(|r| (r.criterion_id.clone(), r.ranks()[a.atom_id.as_str()]))
                .collect(),
        );
        a.crrf_score = Some(fused.scores[&a.atom_id]);
        a.selected = selected.contains(a.atom_id.as_str());
    }
    Ok(repairs)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub chunk_id: String,
    pub reason: String,
}

/// Selected atoms with a per-chunk index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidInformationPool {
    pub atoms: Vec<AtomicUnit>,
    pub by_chunk: BTreeMap<String, Vec<usize>>,
}

impl ValidInformationPool {
    pub fn from_atoms(atoms: impl IntoIterator<Item = AtomicUnit>) -> Self {
        let atoms: Vec<AtomicUnit> = atoms.into_iter().filter(|a| a.selected).collect();
        let mut by_chunk: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, a) in atoms.iter().enumerate() {
            by_chunk.entry(a.chunk_id.clone()).or_default().push(i);
        }
        Self { atoms, by_chunk }
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn domain(&self, tag: &str) -> Vec<&AtomicUnit> {
        self.atoms.iter().filter(|a| a.domain_tag == tag).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomicsStatsRow {
    pub domain: String,
    pub chunks: usize,
    pub total_atoms: usize,
    pub valid_atoms: usize,
    pub valid_pass_rate: f64,
    pub selected_atoms: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomicsStats {
    pub top_k: usize,
    pub rows: Vec<AtomicsStatsRow>,
    pub skipped_chunks: usize,
    pub repaired_rankings: usize,
}

impl AtomicsStats {
    pub fn compute(chunks: &[Chunk], atoms: &[AtomicUnit], top_k: usize, skipped: usize, repairs: usize) -> Self {
        let mut domains: BTreeMap<&str, AtomicsStatsRow> = BTreeMap::new();
        for c in chunks {
            domains.entry(c.domain_tag.as_str()).or_insert_with(|| empty_row(&c.domain_tag)).chunks += 1;
        }
        for a in atoms {
            let row = domains.entry(a.domain_tag.as_str()).or_insert_with(|| empty_row(&a.domain_tag));
            row.total_atoms += 1;
            row.valid_atoms += usize::from(a.is_valid());
            row.selected_atoms += usize::from(a.selected);
        }
        let rows = domains
            .into_values()
            .map(|mut r| {
                r.valid_pass_rate = if r.total_atoms == 0 { 0.0 } else { 100.0 * r.valid_atoms as f64 / r.total_atoms as f64 };
                r
            })
            .collect();
        Self { top_k, rows, skipped_chunks: skipped, repaired_rankings: repairs }
    }
}

fn empty_row(domain: &str) -> AtomicsStatsRow {
    AtomicsStatsRow {
        domain: domain.to_string(),
        chunks: 0,
        total_atoms: 0,
        valid_atoms: 0,
        valid_pass_rate: 0.0,
        selected_atoms: 0,
    }
}

#[derive(Debug, Clone)]
pub struct PoolBuild {
    /// Every extracted atom, in chunk order, with verdicts and selection.
    pub atoms: Vec<AtomicUnit>,
    pub pool: ValidInformationPool,
    pub skipped: Vec<SkipRecord>,
    pub stats: AtomicsStats,
}

/// Runs extraction, validity filtering and selection over every chunk
/// (chunks in parallel, results in chunk order).
pub fn build_pool(gw: &Gateway, chunks: &[Chunk], k: usize) -> PoolBuild {
    let per_chunk: Vec<(Vec<AtomicUnit>, Option<SkipRecord>, usize)> = chunks
        .par_iter()
        .map(|chunk| {
            let mut atoms = match extract_atoms(gw, chunk) {
                Ok(a) => a,
                Err(e) => return (Vec::new(), Some(SkipRecord { chunk_id: chunk.chunk_id.clone(), reason: e.to_string() }), 0),
            };
            if atoms.is_empty() {
                let skip = SkipRecord { chunk_id: chunk.chunk_id.clone(), reason: "no atoms extracted".into() };
                return (atoms, Some(skip), 0);
            }
            let valid_idx = filter_validity(gw, &mut atoms);
            let mut valid: Vec<AtomicUnit> = valid_idx.iter().map(|&i| atoms[i].clone()).collect();
            let (skip, repairs) = match rank_and_select(gw, &mut valid, k) {
                Ok(r) => (None, r),
                Err(e) => {
                    valid.iter_mut().for_each(|a| a.selected = false);
                    (Some(SkipRecord { chunk_id: chunk.chunk_id.clone(), reason: e.to_string() }), 0)
                }
            };
            for (slot, ranked) in valid_idx.into_iter().zip(valid) {
                atoms[slot] = ranked;
            }
            (atoms, skip, repairs)
        })
        .collect();

    let mut atoms = Vec::new();
    let mut skipped = Vec::new();
    let mut repairs = 0;
    for (a, s, r) in per_chunk {
        atoms.extend(a);
        skipped.extend(s);
        repairs += r;
    }
    let stats = AtomicsStats::compute(chunks, &atoms, k, skipped.len(), repairs);
    PoolBuild { pool: ValidInformationPool::from_atoms(atoms.iter().cloned()), atoms, skipped, stats }
}
