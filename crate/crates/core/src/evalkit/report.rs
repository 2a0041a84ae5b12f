//! Per-item metric records and macro-averaged slices.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::metrics::{coverage_at_k, mrr, ndcg_at_k, perfrecall_at_k};
use crate::qgen::BenchmarkItem;

pub const DEFAULT_K: usize = 10;

/// One line of `run.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub item_id: String,
    pub retriever_id: String,
    pub ranking: Vec<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub coverage: f64,
    pub perfrecall: f64,
    pub ndcg: f64,
    pub mrr: f64,
}

impl Scores {
    pub fn compute(ranking: &[String], item: &BenchmarkItem, k: usize) -> Self {
        let g = &item.gold_groups;
        Self {
            coverage: coverage_at_k(ranking, g, k),
            perfrecall: perfrecall_at_k(ranking, g, k),
            ndcg: ndcg_at_k(ranking, g, k),
            mrr: mrr(ranking, g),
        }
    }
}

/// One line of `item_metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemMetrics {
    pub item_id: String,
    pub retriever_id: String,
    pub domain_tag: String,
    pub hop: usize,
    pub missing: bool,
    #[serde(flatten)]
    pub scores: Scores,
}

/// `domain` and `hop` are `"all"` for aggregate slices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceRow {
    pub retriever_id: String,
    pub domain: String,
    pub hop: String,
    pub items: usize,
    #[serde(flatten)]
    pub scores: Scores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub k: usize,
    pub rows: Vec<SliceRow>,
    pub warnings: Vec<String>,
}

impl MetricReport {
    pub fn row(&self, retriever: &str, domain: &str, hop: &str) -> Option<&SliceRow> {
        self.rows.iter().find(|r| r.retriever_id == retriever && r.domain == domain && r.hop == hop)
    }

    /// Tab-separated table, percentages with two decimals.
    pub fn to_tsv(&self) -> String {
        let k = self.k;
        let mut out = format!("retriever\tdomain\thop\titems\tCoverage@{k}\tPerfRecall@{k}\tNDCG@{k}\tMRR\n");
        for r in &self.rows {
            let s = r.scores;
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{:.2}\t{:.2}\t{:.2}\t{:.2}",
                r.retriever_id,
                r.domain,
                r.hop,
                r.items,
                100.0 * s.coverage,
                100.0 * s.perfrecall,
                100.0 * s.ndcg,
                100.0 * s.mrr
            );
        }
        out
    }
}

/// Scores every (retriever, item) pair. Items absent from a retriever's run
/// score zero and produce a warning.
pub fn item_metrics(runs: &[RunRecord], items: &[BenchmarkItem], k: usize) -> (Vec<ItemMetrics>, Vec<String>) {
    let mut by_retriever: BTreeMap<&str, HashMap<&str, &[String]>> = BTreeMap::new();
    for r in runs {
        by_retriever.entry(&r.retriever_id).or_default().insert(&r.item_id, &r.ranking);
    }
    let mut out = Vec::new();
    let mut warnings = Vec::new();
    for (retriever, rankings) in &by_retriever {
        for item in items {
            let ranking = rankings.get(item.item_id.as_str());
            if ranking.is_none() {
                let w = format!("{retriever}: item {} missing from run, scored as zero", item.item_id);
                tracing::warn!("{w}");
                warnings.push(w);
            }
            out.push(ItemMetrics {
                item_id: item.item_id.clone(),
                retriever_id: retriever.to_string(),
                domain_tag: item.domain_tag.clone(),
                hop: item.hop,
                missing: ranking.is_none(),
                scores: ranking.map(|r| Scores::compute(r, item, k)).unwrap_or_default(),
            });
        }
    }
    (out, warnings)
}

fn mean(records: &[&ItemMetrics]) -> Scores {
    let n = records.len().max(1) as f64;
    let sum = |f: fn(&Scores) -> f64| records.iter().map(|r| f(&r.scores)).sum::<f64>() / n;
    Scores { coverage: sum(|s| s.coverage), perfrecall: sum(|s| s.perfrecall), ndcg: sum(|s| s.ndcg), mrr: sum(|s| s.mrr) }
}

/// Macro-averages item records per (retriever, domain, hop), per domain,
/// per hop and overall.
pub fn aggregate(records: &[ItemMetrics], k: usize, warnings: Vec<String>) -> MetricReport {
    let mut slices: BTreeMap<(String, String, String), Vec<&ItemMetrics>> = BTreeMap::new();
    for r in records {
        let hop = r.hop.to_string();
        for (d, h) in [(r.domain_tag.as_str(), hop.as_str()), (r.domain_tag.as_str(), "all"), ("all", hop.as_str()), ("all", "all")] {
            slices.entry((r.retriever_id.clone(), d.to_string(), h.to_string())).or_default().push(r);
        }
    }
    let rows = slices
        .into_iter()
        .map(|((retriever_id, domain, hop), recs)| SliceRow { retriever_id, domain, hop, items: recs.len(), scores: mean(&recs) })
        .collect();
    MetricReport { k, rows, warnings }
}

pub fn report(runs: &[RunRecord], items: &[BenchmarkItem], k: usize) -> (MetricReport, Vec<ItemMetrics>) {
    let (records, warnings) = item_metrics(runs, items, k);
    (aggregate(&records, k, warnings), records)
}
