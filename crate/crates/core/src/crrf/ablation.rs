//! Prompting × aggregation ablation against gold-labelled ranking instances.

use std::collections::BTreeSet;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fuse, FusionError, FusionMethod, RankingSet, ATOM_CRITERIA};
use crate::gateway::{ids, Gateway, GatewayError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Prompting {
    Vanilla,
    Combined,
    Separate,
}

impl Prompting {
    pub const ALL: [Prompting; 3] = [Prompting::Vanilla, Prompting::Combined, Prompting::Separate];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationInstance {
    pub id: String,
    pub candidates: Vec<Candidate>,
    /// Ids of the candidates judged relevant.
    pub gold: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub prompting: Prompting,
    pub aggregation: FusionMethod,
    pub ndcg_at_3: f64,
    pub mrr: f64,
    pub top1: f64,
    pub cv_ndcg: f64,
    pub cv_mrr: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub instances: usize,
    pub seed: u64,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, prompting: Prompting, aggregation: FusionMethod) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.prompting == prompting && r.aggregation == aggregation)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("prompting\taggregation\tndcg@3\tmrr\ttop1\tcv_ndcg\tcv_mrr\truns\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{:?}\t{}\t{:.3}\t{:.3}\t{:.1}\t{:.1}\t{:.1}\t{}\n",
                r.prompting,
                r.aggregation.name(),
                r.ndcg_at_3,
                r.mrr,
                r.top1,
                r.cv_ndcg,
                r.cv_mrr,
                r.runs
            ));
        }
        out
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AblationError {
    #[error("ablation dataset is empty")]
    EmptyDataset,
    #[error("ablation needs at least one run")]
    NoRuns,
    #[error("instance {instance}: {reason}")]
    InvalidInstance { instance: String, reason: String },
    #[error("instance {instance}: {source}")]
    Gateway {
        instance: String,
        #[source]
        source: GatewayError,
    },
    #[error("instance {instance}: {source}")]
    Fusion {
        instance: String,
        #[source]
        source: FusionError,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn load_dataset(path: &Path) -> Result<Vec<AblationInstance>, AblationError> {
    Ok(crate::io::read_jsonl(path)?)
}

/// Binary-gain NDCG@k of `order` against a gold set.
pub fn ndcg_at(order: &[String], gold: &BTreeSet<&str>, k: usize) -> f64 {
    let dcg: f64 = order
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, id)| gold.contains(id.as_str()))
        .map(|(i, _)| 1.0 / ((i + 2) as f64).log2())
        .sum();
    let ideal: f64 = (0..gold.len().min(k)).map(|i| 1.0 / ((i + 2) as f64).log2()).sum();
    if ideal == 0.0 {
        0.0
    } else {
        dcg / ideal
    }
}

pub fn reciprocal_rank(order: &[String], gold: &BTreeSet<&str>) -> f64 {
    order.iter().position(|id| gold.contains(id.as_str())).map_or(0.0, |p| 1.0 / (p + 1) as f64)
}

/// Mean and coefficient of variation (100 × population std / mean; 0 when
/// the mean is 0).
pub fn mean_cv(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let cv = if mean == 0.0 { 0.0 } else { 100.0 * var.sqrt() / mean };
    (mean, cv)
}

fn ranking_sets(gw: &Gateway, inst: &AblationInstance, prompting: Prompting) -> Result<RankingSet, AblationError> {
    let cands: Vec<(String, String)> = inst.candidates.iter().map(|c| (c.id.clone(), c.text.clone())).collect();
    let wrap = |source| AblationError::Gateway { instance: inst.id.clone(), source };
    let rankings = match prompting {
        Prompting::Vanilla => vec![gw.rank_by_criterion(ids::RANK_VANILLA, "vanilla", &cands).map_err(wrap)?.ranking],
        Prompting::Combined => gw.score_jointly(ids::RANK_COMBINED, &ATOM_CRITERIA, &cands).map_err(wrap)?,
        Prompting::Separate => {
            let templates = [
                ids::RANK_ATOM_VALIDITY,
                ids::RANK_ATOM_COMPLETENESS,
                ids::RANK_ATOM_SPECIFICITY,
                ids::RANK_ATOM_CLARITY,
                ids::RANK_ATOM_QUESTIONABILITY,
            ];
            templates
                .iter()
                .zip(ATOM_CRITERIA)
                .map(|(t, c)| gw.rank_by_criterion(t, c, &cands).map(|o| o.ranking).map_err(wrap))
                .collect::<Result<_, _>>()?
        }
    };
    RankingSet::new(cands.into_iter().map(|c| c.0).collect(), rankings)
        .map_err(|source| AblationError::Fusion { instance: inst.id.clone(), source })
}

/// Runs every `(prompting, aggregation)` strategy `runs` times, reseeding the
/// gateway with `seed + run` for each run.
pub fn run_ablation(
    gw: &Gateway,
    dataset: &[AblationInstance],
    strategies: &[(Prompting, FusionMethod)],
    runs: usize,
    seed: u64,
) -> Result<AblationReport, AblationError> {
    if dataset.is_empty() {
        return Err(AblationError::EmptyDataset);
    }
    if runs == 0 {
        return Err(AblationError::NoRuns);
    }
    for inst in dataset {
        let known: BTreeSet<&str> = inst.candidates.iter().map(|c| c.id.as_str()).collect();
        if inst.candidates.len() < 2 || inst.gold.is_empty() || inst.gold.iter().any(|g| !known.contains(g.as_str())) {
            return Err(AblationError::InvalidInstance {
                instance: inst.id.clone(),
                reason: "needs >= 2 candidates and a non-empty gold set drawn from them".into(),
            });
        }
    }
    let promptings: BTreeSet<Prompting> = strategies.iter().map(|s| s.0).collect();

    // per run, per strategy: (ndcg, mrr, top1) means over instances
    let mut per_run: Vec<Vec<(f64, f64, f64)>> = Vec::with_capacity(runs);
    for run in 0..runs {
        let run_gw = gw.reseeded(seed.wrapping_add(run as u64));
        let per_instance: Vec<Vec<(f64, f64, f64)>> = dataset
            .par_iter()
            .map(|inst| {
                let gold: BTreeSet<&str> = inst.gold.iter().map(String::as_str).collect();
                let sets: Vec<(Prompting, RankingSet)> = promptings
                    .iter()
                    .map(|&p| ranking_sets(&run_gw, inst, p).map(|s| (p, s)))
                    .collect::<Result<_, _>>()?;
                strategies
                    .iter()
                    .map(|&(p, m)| {
                        let set = &sets.iter().find(|s| s.0 == p).expect("prompting collected").1;
                        let fused = fuse(set, m).map_err(|source| AblationError::Fusion { instance: inst.id.clone(), source })?;
                        let top1 = if gold.contains(fused.order[0].as_str()) { 100.0 } else { 0.0 };
                        Ok((ndcg_at(&fused.order, &gold, 3), reciprocal_rank(&fused.order, &gold), top1))
                    })
                    .collect()
            })
            .collect::<Result<_, AblationError>>()?;
        let n = dataset.len() as f64;
        per_run.push(
            (0..strategies.len())
                .map(|s| {
                    let sum = per_instance.iter().fold((0.0, 0.0, 0.0), |acc, m| (acc.0 + m[s].0, acc.1 + m[s].1, acc.2 + m[s].2));
                    (sum.0 / n, sum.1 / n, sum.2 / n)
                })
                .collect(),
        );
    }

    let rows = strategies
        .iter()
        .enumerate()
        .map(|(s, &(prompting, aggregation))| {
            let ndcg: Vec<f64> = per_run.iter().map(|r| r[s].0).collect();
            let mrr: Vec<f64> = per_run.iter().map(|r| r[s].1).collect();
            let top1: Vec<f64> = per_run.iter().map(|r| r[s].2).collect();
            let (ndcg_at_3, cv_ndcg) = mean_cv(&ndcg);
            let (mrr, cv_mrr) = mean_cv(&mrr);
            AblationRow { prompting, aggregation, ndcg_at_3, mrr, top1: mean_cv(&top1).0, cv_ndcg, cv_mrr, runs }
        })
        .collect();
    Ok(AblationReport { instances: dataset.len(), seed, rows })
}

/// All nine prompting × aggregation combinations.
pub fn full_grid() -> Vec<(Prompting, FusionMethod)> {
    Prompting::ALL.iter().flat_map(|&p| FusionMethod::ALL.iter().map(move |&m| (p, m))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{MockBackend, MockRules};

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn perfect_and_second_place_metrics() {
        let gold: BTreeSet<&str> = ["g"].into();
        let first = s(&["g", "a", "b"]);
        assert_eq!(ndcg_at(&first, &gold, 3), 1.0);
        assert_eq!(reciprocal_rank(&first, &gold), 1.0);
        let second = s(&["a", "g", "b", "c"]);
        assert_eq!(reciprocal_rank(&second, &gold), 0.5);
        assert!((ndcg_at(&second, &gold, 3) - 1.0 / 3f64.log2()).abs() < 1e-15);
    }

    #[test]
    fn cv_zero_for_identical_runs() {
        assert_eq!(mean_cv(&[0.4; 5]), (0.4, 0.0));
        let (m, cv) = mean_cv(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert_eq!(cv, 50.0);
    }

    #[test]
    fn empty_dataset_fatal() {
        let gw = Gateway::mock(1);
        assert!(matches!(run_ablation(&gw, &[], &full_grid(), 1, 1), Err(AblationError::EmptyDataset)));
    }

    #[test]
    fn overridden_gold_first_gives_perfect_scores() {
        let texts = ["alpha fact one", "beta fact two", "gamma fact three"];
        let mut rules = MockRules::default();
        for c in ATOM_CRITERIA.iter().chain(["vanilla"].iter()) {
            for (i, t) in texts.iter().enumerate() {
                rules.score_overrides.insert((c.to_string(), t.to_string()), 0.9 - 0.3 * i as f64);
            }
        }
        let gw = Gateway::builder(Box::new(MockBackend::new(rules))).build();
        let inst = AblationInstance {
            id: "i".into(),
            candidates: texts.iter().enumerate().map(|(i, t)| Candidate { id: format!("x{i}"), text: t.to_string() }).collect(),
            gold: vec!["x0".into()],
        };
        let report = run_ablation(&gw, &[inst], &full_grid(), 5, 42).unwrap();
        assert_eq!(report.rows.len(), 9);
        for row in &report.rows {
            assert_eq!((row.ndcg_at_3, row.mrr, row.top1, row.cv_ndcg, row.runs), (1.0, 1.0, 100.0, 0.0, 5), "{row:?}");
        }
    }
}
