use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Mutex, PoisonError};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    AtomicExtraction,
    ValidSelection,
    Embedding,
    RedundancyTracking,
    QuestionGeneration,
    E2e,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::AtomicExtraction,
        Stage::ValidSelection,
        Stage::Embedding,
        Stage::RedundancyTracking,
        Stage::QuestionGeneration,
        Stage::E2e,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::AtomicExtraction => "atomic_extraction",
            Stage::ValidSelection => "valid_selection",
            Stage::Embedding => "embedding",
            Stage::RedundancyTracking => "redundancy_tracking",
            Stage::QuestionGeneration => "question_generation",
            Stage::E2e => "e2e",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

/// USD per 1K tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct UnitPrices {
    pub prompt_per_1k: f64,
    pub completion_per_1k: f64,
}

impl UnitPrices {
    pub fn cost(&self, prompt_tokens: u64, completion_tokens: u64) -> f64 {
        prompt_tokens as f64 * self.prompt_per_1k / 1000.0 + completion_tokens as f64 * self.completion_per_1k / 1000.0
    }
}

/// Unit prices keyed by model id, with a fallback.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Pricing {
    #[serde(default)]
    pub default: UnitPrices,
    #[serde(default)]
    pub models: BTreeMap<String, UnitPrices>,
}

impl Pricing {
    pub fn for_model(&self, model_id: &str) -> UnitPrices {
        self.models.get(model_id).copied().unwrap_or(self.default)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostLedgerEntry {
    pub stage: Stage,
    pub model_id: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub cost_usd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct StageTotals {
    pub calls: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub cost_usd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub stages: BTreeMap<Stage, StageTotals>,
    pub total: StageTotals,
}

impl CostReport {
    /// Aggregates entries. Float sums are taken over entries sorted by cost,
    /// so the result does not depend on the order calls completed in.
    pub fn from_entries(entries: &[CostLedgerEntry]) -> Self {
        let mut stages: BTreeMap<Stage, StageTotals> = Stage::ALL.iter().map(|s| (*s, StageTotals::default())).collect();
        let mut sorted: Vec<&CostLedgerEntry> = entries.iter().collect();
        sorted.sort_by(|a, b| a.cost_usd.total_cmp(&b.cost_usd));
        for e in sorted {
            let t = stages.entry(e.stage).or_default();
            t.calls += 1;
            t.prompt_tokens += e.prompt_tokens;
            t.completion_tokens += e.completion_tokens;
            t.cost_usd += e.cost_usd;
        }
        let mut total = StageTotals::default();
        for t in stages.values() {
            total.calls += t.calls;
            total.prompt_tokens += t.prompt_tokens;
            total.completion_tokens += t.completion_tokens;
            total.cost_usd += t.cost_usd;
        }
        Self { stages, total }
    }

    /// Merges reports from separate runs/processes (e.g. one per pipeline stage).
    pub fn merge(reports: &[CostReport]) -> Self {
        let mut stages: BTreeMap<Stage, StageTotals> = Stage::ALL.iter().map(|s| (*s, StageTotals::default())).collect();
        for r in reports {
            for (stage, t) in &r.stages {
                let acc = stages.entry(*stage).or_default();
                acc.calls += t.calls;
                acc.prompt_tokens += t.prompt_tokens;
                acc.completion_tokens += t.completion_tokens;
                acc.cost_usd += t.cost_usd;
            }
        }
        let mut total = StageTotals::default();
        for t in stages.values() {
            total.calls += t.calls;
            total.prompt_tokens += t.prompt_tokens;
            total.completion_tokens += t.completion_tokens;
            total.cost_usd += t.cost_usd;
        }
        Self { stages, total }
    }

    /// Share of the grand total attributable to `stage`, in percent.
    pub fn share_pct(&self, stage: Stage) -> f64 {
        if self.total.cost_usd == 0.0 {
            return 0.0;
        }
        100.0 * self.stages.get(&stage).map_or(0.0, |t| t.cost_usd) / self.total.cost_usd
    }
}

/// Append-only log of priced calls.
pub struct CostLedger {
    pricing: Pricing,
    entries: Mutex<Vec<CostLedgerEntry>>,
}

impl fmt::Debug for CostLedger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CostLedger").field("entries", &self.entries.lock().unwrap_or_else(PoisonError::into_inner).len()).finish()
    }
}

impl CostLedger {
    pub fn new(pricing: Pricing) -> Self {
        Self { pricing, entries: Mutex::new(Vec::new()) }
    }

    pub fn record(&self, stage: Stage, model_id: &str, prompt_tokens: u64, completion_tokens: u64) {
        let cost_usd = self.pricing.for_model(model_id).cost(prompt_tokens, completion_tokens);
        self.entries.lock().unwrap_or_else(PoisonError::into_inner).push(CostLedgerEntry {
            stage,
            model_id: model_id.to_string(),
            prompt_tokens,
            completion_tokens,
            cost_usd,
        });
    }

    pub fn entries(&self) -> Vec<CostLedgerEntry> {
        self.entries.lock().unwrap_or_else(PoisonError::into_inner).clone()
    }

    pub fn report(&self) -> CostReport {
        CostReport::from_entries(&self.entries.lock().unwrap_or_else(PoisonError::into_inner))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ledger(prompt_per_1k: f64) -> CostLedger {
        CostLedger::new(Pricing {
            default: UnitPrices { prompt_per_1k, completion_per_1k: 0.0 },
            models: BTreeMap::new(),
        })
    }

    #[test]
    fn empty_ledger_is_all_zero() {
        let r = ledger(0.01).report();
        assert_eq!(r.total, StageTotals::default());
        assert_eq!(r.stages.len(), 6);
        assert!(r.stages.values().all(|t| *t == StageTotals::default()));
    }

    #[test]
    fn two_hundred_token_calls_cost() {
        let l = ledger(0.01);
        l.record(Stage::AtomicExtraction, "m", 100, 0);
        l.record(Stage::AtomicExtraction, "m", 100, 0);
        let r = l.report();
        assert!((r.total.cost_usd - 0.002).abs() < 1e-15);
        assert_eq!(r.total.prompt_tokens, 200);
        assert_eq!(r.total.calls, 2);
    }

    #[test]
    fn stage_totals_sum_to_grand_total() {
        let l = CostLedger::new(Pricing {
            default: UnitPrices { prompt_per_1k: 0.003, completion_per_1k: 0.011 },
            models: [("big".to_string(), UnitPrices { prompt_per_1k: 0.05, completion_per_1k: 0.2 })].into(),
        });
        for i in 0..60u64 {
            let stage = Stage::ALL[(i % 6) as usize];
            l.record(stage, if i % 4 == 0 { "big" } else { "small" }, 37 * i + 5, 11 * i);
        }
        let r = l.report();
        let calls: u64 = r.stages.values().map(|t| t.calls).sum();
        let tokens: u64 = r.stages.values().map(|t| t.prompt_tokens).sum();
        let cost: f64 = r.stages.values().map(|t| t.cost_usd).sum();
        assert_eq!(calls, r.total.calls);
        assert_eq!(tokens, r.total.prompt_tokens);
        assert_eq!(cost, r.total.cost_usd);
        let entries_sum: f64 = l.entries().iter().map(|e| e.cost_usd).sum();
        assert!((entries_sum - r.total.cost_usd).abs() < 1e-12);
        let shares: f64 = Stage::ALL.iter().map(|s| r.share_pct(*s)).sum();
        assert!((shares - 100.0).abs() < 1e-9);
    }

    #[test]
    fn report_is_order_independent() {
        let a = ledger(0.0123);
        let b = ledger(0.0123);
        let calls: Vec<u64> = (1..50).map(|i| i * 7919 % 1013).collect();
        for &t in &calls {
            a.record(Stage::E2e, "m", t, 0);
        }
        for &t in calls.iter().rev() {
            b.record(Stage::E2e, "m", t, 0);
        }
        assert_eq!(a.report(), b.report());
    }
}
