//! Criterion-wise rank fusion.
//!
//! Each criterion ranks the same candidate set independently; [`rrf_fuse`]
//! combines them with `s(x) = Σ 1/rank_i(x)` (no smoothing constant).
//! [`base_fuse`] and [`minmax_fuse`] average raw scores instead and exist as
//! baselines for the ablation harness in [`ablation`].
//!
//! Ties in fused score are broken by candidate id, lexicographically.

pub mod ablation;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use crate::gateway::CriterionRanking;

pub const ATOM_CRITERIA: [&str; 5] = ["validity", "completeness", "specificity", "clarity", "questionability"];
pub const QUESTION_CRITERIA: [&str; 4] = ["connectivity", "fluency", "essentiality", "validity"];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FusionError {
    #[error("ranking set has no criteria")]
    NoCriteria,
    #[error("ranking set has no candidates")]
    NoCandidates,
    #[error("candidate {0:?} listed twice")]
    DuplicateCandidate(String),
    #[error("criterion {0:?} does not rank exactly the candidate set")]
    InconsistentCandidates(String),
    #[error("criterion {0:?} has no raw score for every candidate")]
    MissingRawScores(String),
    #[error("criterion {0:?} has a non-finite raw score")]
    NonFinite(String),
}

/// Per-criterion rankings over one candidate set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingSet {
    candidates: Vec<String>,
    per_criterion: Vec<CriterionRanking>,
}

impl RankingSet {
    pub fn new(candidates: Vec<String>, per_criterion: Vec<CriterionRanking>) -> Result<Self, FusionError> {
        if per_criterion.is_empty() {
            return Err(FusionError::NoCriteria);
        }
        if candidates.is_empty() {
            return Err(FusionError::NoCandidates);
        }
        let mut set = BTreeSet::new();
        for c in &candidates {
            if !set.insert(c.as_str()) {
                return Err(FusionError::DuplicateCandidate(c.clone()));
            }
        }
        for r in &per_criterion {
            let ranked: BTreeSet<&str> = r.order.iter().map(String::as_str).collect();
            if ranked.len() != r.order.len() || ranked != set {
                return Err(FusionError::InconsistentCandidates(r.criterion_id.clone()));
            }
            if let Some(scores) = &r.raw_scores {
                if scores.values().any(|s| !s.is_finite()) {
                    return Err(FusionError::NonFinite(r.criterion_id.clone()));
                }
            }
        }
        Ok(Self { candidates, per_criterion })
    }

    pub fn candidates(&self) -> &[String] {
        &self.candidates
    }

    pub fn per_criterion(&self) -> &[CriterionRanking] {
        &self.per_criterion
    }

    fn raw_scores(&self) -> Result<Vec<&BTreeMap<String, f64>>, FusionError> {
        self.per_criterion
            .iter()
            .map(|r| match &r.raw_scores {
                Some(s) if self.candidates.iter().all(|c| s.contains_key(c)) => Ok(s),
                _ => Err(FusionError::MissingRawScores(r.criterion_id.clone())),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FusionMethod {
    #[serde(rename = "RRF")]
    Rrf,
    Base,
    MinMax,
}

impl FusionMethod {
    pub const ALL: [FusionMethod; 3] = [FusionMethod::Base, FusionMethod::MinMax, FusionMethod::Rrf];

    pub fn name(self) -> &'static str {
        match self {
            FusionMethod::Rrf => "RRF",
            FusionMethod::Base => "Base",
            FusionMethod::MinMax => "MinMax",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedRanking {
    pub order: Vec<String>,
    pub scores: BTreeMap<String, f64>,
    pub method: FusionMethod,
}

impl FusedRanking {
    fn from_scores(scores: BTreeMap<String, f64>, method: FusionMethod) -> Self {
        let mut order: Vec<String> = scores.keys().cloned().collect();
        order.sort_by(|a, b| scores[b].total_cmp(&scores[a]).then_with(|| a.cmp(b)));
        Self { order, scores, method }
    }

    pub fn top(&self, k: usize) -> &[String] {
        &self.order[..k.min(self.order.len())]
    }
}

pub fn fuse(set: &RankingSet, method: FusionMethod) -> Result<FusedRanking, FusionError> {
    match method {
        FusionMethod::Rrf => Ok(rrf_fuse(set)),
        FusionMethod::Base => base_fuse(set),
        FusionMethod::MinMax => minmax_fuse(set),
    }
}

/// `s(x) = Σ_i 1/rank_i(x)`. The reciprocal ranks of each candidate are
/// summed from the best rank to the worst, so the score depends only on the
/// multiset of ranks and not on the order the criteria are listed in.
pub fn rrf_fuse(set: &RankingSet) -> FusedRanking {
    let mut ranks: BTreeMap<&str, Vec<usize>> = set.candidates.iter().map(|c| (c.as_str(), Vec::new())).collect();
    for r in &set.per_criterion {
        for (i, id) in r.order.iter().enumerate() {
            ranks.get_mut(id.as_str()).expect("validated candidate").push(i + 1);
        }
    }
    let scores = ranks
        .into_iter()
        .map(|(id, mut rs)| {
            rs.sort_unstable();
            (id.to_string(), rs.iter().map(|&r| 1.0 / r as f64).sum())
        })
        .collect();
    FusedRanking::from_scores(scores, FusionMethod::Rrf)
}

/// Mean of raw per-criterion scores.
pub fn base_fuse(set: &RankingSet) -> Result<FusedRanking, FusionError> {
    let raw = set.raw_scores()?;
    let n = raw.len() as f64;
    let scores = set
        .candidates
        .iter()
        .map(|c| (c.clone(), raw.iter().map(|s| s[c]).sum::<f64>() / n))
        .collect();
    Ok(FusedRanking::from_scores(scores, FusionMethod::Base))
}

/// Per-criterion `(s - min) / (max - min)`, then the mean. A criterion whose
/// scores are all equal contributes 0.5 to every candidate.
pub fn minmax_fuse(set: &RankingSet) -> Result<FusedRanking, FusionError> {
    let raw = set.raw_scores()?;
    let n = raw.len() as f64;
    let bounds: Vec<(f64, f64)> = raw
        .iter()
        .map(|s| {
            let vals = set.candidates.iter().map(|c| s[c]);
            (vals.clone().fold(f64::INFINITY, f64::min), vals.fold(f64::NEG_INFINITY, f64::max))
        })
        .collect();
    let scores = set
        .candidates
        .iter()
        .map(|c| {
            let sum: f64 = raw
                .iter()
                .zip(&bounds)
                .map(|(s, &(lo, hi))| if hi > lo { (s[c] - lo) / (hi - lo) } else { 0.5 })
                .sum();
            (c.clone(), sum / n)
        })
        .collect();
    Ok(FusedRanking::from_scores(scores, FusionMethod::MinMax))
}

/// Builds a ranking from raw scores (descending, ties by input order).
pub fn ranking_from_scores(criterion_id: &str, scored: &[(String, f64)]) -> CriterionRanking {
    let mut idx: Vec<usize> = (0..scored.len()).collect();
    idx.sort_by(|&a, &b| scored[b].1.total_cmp(&scored[a].1).then(a.cmp(&b)));
    CriterionRanking {
        criterion_id: criterion_id.to_string(),
        order: idx.iter().map(|&i| scored[i].0.clone()).collect(),
        raw_scores: Some(scored.iter().cloned().collect()),
    }
}
