//! Exhaustive cosine search over precomputed chunk embeddings.

use crate::gateway::{EmbeddingVector, Gateway, GatewayError};

#[derive(Debug, thiserror::Error)]
pub enum DenseError {
    #[error("query has dimension {query}, chunk {chunk_id} has {chunk}")]
    DimensionMismatch { chunk_id: String, query: usize, chunk: usize },
    #[error("query embedded with {query}, index built with {index}")]
    ModelMismatch { query: String, index: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Top `k` chunk ids by cosine with `query`, ties by chunk id.
pub fn dense_search(query: &EmbeddingVector, chunks: &[(String, EmbeddingVector)], k: usize) -> Result<Vec<String>, DenseError> {
    let mut scored = Vec::with_capacity(chunks.len());
    for (id, e) in chunks {
        if e.values.len() != query.values.len() {
            return Err(DenseError::DimensionMismatch { chunk_id: id.clone(), query: query.values.len(), chunk: e.values.len() });
        }
        scored.push((id, query.cosine(e)));
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Ok(scored.into_iter().take(k).map(|(id, _)| id.clone()).collect())
}

/// Chunk embeddings under one model, queried through the gateway.
#[derive(Debug, Clone)]
pub struct DenseIndex {
    pub model_id: String,
    pub chunks: Vec<(String, EmbeddingVector)>,
}

impl DenseIndex {
    pub fn build<'a>(gw: &Gateway, docs: impl IntoIterator<Item = (&'a str, &'a str)>, model_id: &str) -> Result<Self, DenseError> {
        let (ids, texts): (Vec<String>, Vec<String>) = docs.into_iter().map(|(i, t)| (i.to_string(), t.to_string())).unzip();
        let vectors = if texts.is_empty() { Vec::new() } else { gw.embed(&texts, model_id)? };
        Ok(Self { model_id: model_id.to_string(), chunks: ids.into_iter().zip(vectors).collect() })
    }

    pub fn search_vector(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<String>, DenseError> {
        if query.model_id != self.model_id {
            return Err(DenseError::ModelMismatch { query: query.model_id.clone(), index: self.model_id.clone() });
        }
        dense_search(query, &self.chunks, k)
    }

    pub fn search(&self, gw: &Gateway, query: &str, k: usize) -> Result<Vec<String>, DenseError> {
        let q = gw.embed(&[query.to_string()], &self.model_id)?.remove(0);
        self.search_vector(&q, k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(values: Vec<f64>) -> EmbeddingVector {
        EmbeddingVector { values, model_id: "m".into() }
    }

    #[test]
    fn identical_embedding_ranks_first_and_k_clamps() {
        let chunks: Vec<(String, EmbeddingVector)> =
            vec![("a".into(), v(vec![1.0, 0.0])), ("b".into(), v(vec![0.6, 0.8])), ("c".into(), v(vec![0.0, 1.0]))];
        assert_eq!(dense_search(&v(vec![0.6, 0.8]), &chunks, 1).unwrap(), vec!["b"]);
        assert_eq!(dense_search(&v(vec![0.6, 0.8]), &chunks, 10).unwrap().len(), 3);
    }

    #[test]
    fn dimension_mismatch_fatal() {
        let chunks = vec![("a".to_string(), v(vec![1.0, 0.0, 0.0]))];
        assert!(matches!(dense_search(&v(vec![1.0, 0.0]), &chunks, 1), Err(DenseError::DimensionMismatch { .. })));
    }

    #[test]
    fn index_through_gateway() {
        let gw = Gateway::mock(42);
        let docs = [("c1", "Vienna hosted the Congress of Vienna."), ("c2", "Radium emits alpha particles.")];
        let idx = DenseIndex::build(&gw, docs, "emb").unwrap();
        assert_eq!(idx.search(&gw, "Radium emits alpha particles.", 2).unwrap()[0], "c2");
    }
}
