//! Okapi BM25 over chunk texts.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::terms;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, Clone)]
pub struct Bm25Index {
    params: Bm25Params,
    ids: Vec<String>,
    lengths: Vec<usize>,
    avgdl: f64,
    postings: HashMap<String, Vec<(usize, usize)>>,
}

impl Bm25Index {
    /// Indexes `(chunk_id, text)` pairs.
    pub fn build<'a>(docs: impl IntoIterator<Item = (&'a str, &'a str)>, params: Bm25Params) -> Self {
        let mut ids = Vec::new();
        let mut lengths = Vec::new();
        let mut postings: HashMap<String, Vec<(usize, usize)>> = HashMap::new();
        for (i, (id, text)) in docs.into_iter().enumerate() {
            let ts = terms(text);
            let mut tf: HashMap<String, usize> = HashMap::new();
            for t in &ts {
                *tf.entry(t.clone()).or_default() += 1;
            }
            for (t, n) in tf {
                postings.entry(t).or_default().push((i, n));
            }
            ids.push(id.to_string());
            lengths.push(ts.len());
        }
        let avgdl = if lengths.is_empty() { 0.0 } else { lengths.iter().sum::<usize>() as f64 / lengths.len() as f64 };
        Self { params, ids, lengths, avgdl, postings }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// `ln(1 + (N - df + 0.5) / (df + 0.5))`
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.ids.len() as f64;
        let df = self.postings.get(term).map_or(0, Vec::len) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Scores of every document containing at least one distinct query term.
    pub fn scores(&self, query: &str) -> Vec<(String, f64)> {
        let Bm25Params { k1, b } = self.params;
        let mut acc: HashMap<usize, f64> = HashMap::new();
        let distinct: BTreeSet<String> = terms(query).into_iter().collect();
        for t in &distinct {
            let Some(list) = self.postings.get(t) else { continue };
            let idf = self.idf(t);
            for &(doc, tf) in list {
                let tf = tf as f64;
                let norm = k1 * (1.0 - b + b * self.lengths[doc] as f64 / self.avgdl);
                *acc.entry(doc).or_default() += idf * tf * (k1 + 1.0) / (tf + norm);
            }
        }
        let mut out: Vec<(String, f64)> = acc.into_iter().map(|(d, s)| (self.ids[d].clone(), s)).collect();
        out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        out
    }

    /// Top `k` chunk ids; empty when no query term is indexed.
    pub fn search(&self, query: &str, k: usize) -> Vec<String> {
        self.scores(query).into_iter().take(k).map(|(id, _)| id).collect()
    }
}
