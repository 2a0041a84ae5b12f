//! Retrieval baselines and redundancy-aware scoring.

mod bm25;
mod dense;
mod metrics;
mod report;

pub use bm25::{Bm25Index, Bm25Params};
pub use dense::{dense_search, DenseError, DenseIndex};
pub use metrics::{coverage_at_k, mrr, ndcg_at_k, perfrecall_at_k};
pub use report::{aggregate, item_metrics, report, ItemMetrics, MetricReport, RunRecord, Scores, SliceRow, DEFAULT_K};

use crate::qgen::BenchmarkItem;

/// Runs BM25 for every item, keeping the top `k`.
pub fn run_bm25(index: &Bm25Index, items: &[BenchmarkItem], k: usize) -> Vec<RunRecord> {
    items
        .iter()
        .map(|it| RunRecord { item_id: it.item_id.clone(), retriever_id: "bm25".into(), ranking: index.search(&it.question, k) })
        .collect()
}

/// Runs dense search for every item with queries embedded in one batch.
pub fn run_dense(
    gw: &crate::gateway::Gateway,
    index: &DenseIndex,
    items: &[BenchmarkItem],
    k: usize,
) -> Result<Vec<RunRecord>, DenseError> {
    if items.is_empty() {
        return Ok(Vec::new());
    }
    let queries: Vec<String> = items.iter().map(|it| it.question.clone()).collect();
    let vectors = gw.embed(&queries, &index.model_id)?;
    let retriever_id = format!("dense:{}", index.model_id);
    items
        .iter()
        .zip(vectors)
        .map(|(it, q)| {
            Ok(RunRecord { item_id: it.item_id.clone(), retriever_id: retriever_id.clone(), ranking: index.search_vector(&q, k)? })
        })
        .collect()
}
