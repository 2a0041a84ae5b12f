//! Redundancy-aware retrieval metrics. A gold group is a set of
//! interchangeable chunk ids; retrieving any member satisfies the group.

use std::collections::BTreeSet;

pub type GoldGroups = [BTreeSet<String>];

fn hit_groups(ranking: &[String], groups: &GoldGroups, k: usize) -> usize {
    let top: BTreeSet<&str> = ranking.iter().take(k).map(String::as_str).collect();
    groups.iter().filter(|g| g.iter().any(|c| top.contains(c.as_str()))).count()
}

/// Share of groups with a member in the top `k`.
pub fn coverage_at_k(ranking: &[String], groups: &GoldGroups, k: usize) -> f64 {
    if groups.is_empty() {
        return 0.0;
    }
    hit_groups(ranking, groups, k) as f64 / groups.len() as f64
}

/// 1 when every group has a member in the top `k`, else 0.
pub fn perfrecall_at_k(ranking: &[String], groups: &GoldGroups, k: usize) -> f64 {
    if !groups.is_empty() && hit_groups(ranking, groups, k) == groups.len() {
        1.0
    } else {
        0.0
    }
}

/// Binary-gain NDCG where each group is credited at most once. A chunk
/// earns gain 1 when it raises the number of groups that the chunks seen so
/// far can be matched to, one chunk per group; credits may move between
/// groups as later chunks arrive. The ideal places one hit per matchable
/// group (|groups| when every group has its own chunk) at the top ranks.
pub fn ndcg_at_k(ranking: &[String], groups: &GoldGroups, k: usize) -> f64 {
    let mut m = Matching::new(groups);
    let mut dcg = 0.0;
    for (i, chunk) in ranking.iter().take(k).enumerate() {
        if m.add(chunk) {
            dcg += 1.0 / ((i + 2) as f64).log2();
        }
    }
    let mut best = Matching::new(groups);
    let union: BTreeSet<&String> = groups.iter().flatten().collect();
    let matchable = union.into_iter().filter(|c| best.add(c)).count();
    let ideal: f64 = (0..matchable.min(k)).map(|i| 1.0 / ((i + 2) as f64).log2()).sum();
    if ideal == 0.0 {
        0.0
    } else {
        dcg / ideal
    }
}

/// Incremental bipartite matching of chunks to the groups containing them.
struct Matching<'a> {
    groups: &'a GoldGroups,
    chunks: Vec<&'a str>,
    owner: Vec<Option<usize>>,
}

impl<'a> Matching<'a> {
    fn new(groups: &'a GoldGroups) -> Self {
        Self { groups, chunks: Vec::new(), owner: vec![None; groups.len()] }
    }

    /// Adds a chunk; true when the matching grows.
    fn add(&mut self, chunk: &str) -> bool {
        let Some(c) = self.groups.iter().flatten().find(|x| x.as_str() == chunk).map(String::as_str) else {
            return false;
        };
        if self.chunks.contains(&c) {
            return false;
        }
        self.chunks.push(c);
        let mut seen = vec![false; self.groups.len()];
        self.augment(self.chunks.len() - 1, &mut seen)
    }

    fn augment(&mut self, chunk: usize, seen: &mut [bool]) -> bool {
        for g in 0..self.groups.len() {
            if seen[g] || !self.groups[g].contains(self.chunks[chunk]) {
                continue;
            }
            seen[g] = true;
            if self.owner[g].is_none_or(|other| self.augment(other, seen)) {
                self.owner[g] = Some(chunk);
                return true;
            }
        }
        false
    }
}

/// Reciprocal rank of the first chunk in any group, over the whole ranking.
pub fn mrr(ranking: &[String], groups: &GoldGroups) -> f64 {
    ranking
        .iter()
        .position(|c| groups.iter().any(|g| g.contains(c)))
        .map_or(0.0, |p| 1.0 / (p + 1) as f64)
}
