//! Run configuration, read from a TOML file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{DEFAULT_BUDGET, MIN_BUDGET};
use crate::e2e::E2eConfig;
use crate::gateway::{ModelIds, Pricing, ProviderConfig, RetryPolicy};
use crate::qgen::QgenConfig;
use crate::redundancy::RedundancyConfig;
use crate::text::sha256_hex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Mock,
    Provider,
}

/// Exactly one of `path` and `fixture` is set. Relative paths resolve
/// against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub domain: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixture: Option<String>,
}

pub const FIXTURES: [&str; 2] = ["toy", "planted"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub budget: usize,
    pub sources: Vec<SourceConfig>,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self { budget: DEFAULT_BUDGET, sources: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AtomsConfig {
    pub top_k: usize,
}

impl Default for AtomsConfig {
    fn default() -> Self {
        Self { top_k: crate::atomics::DEFAULT_TOP_K }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    /// Metric cutoff.
    pub k: usize,
    /// Ranking length stored per item.
    pub depth: usize,
    pub retrievers: Vec<String>,
    pub dense_model: String,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            k: crate::evalkit::DEFAULT_K,
            depth: 100,
            retrievers: vec!["bm25".into(), "dense".into()],
            dense_model: RedundancyConfig::default().embedding_model,
        }
    }
}

pub const RETRIEVERS: [&str; 2] = ["bm25", "dense"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    /// JSONL of gold-labelled instances; synthetic when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    pub instances: usize,
    pub candidates: usize,
    pub gold: usize,
    pub runs: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self { dataset: None, instances: 40, candidates: 8, gold: 2, runs: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
    pub log_transcripts: bool,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self { max_in_flight: 8, retry: RetryPolicy::default(), log_transcripts: true }
    }
}

/// Knobs for the offline backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockConfig {
    /// Percent of items whose answer the mock answerer knows without context.
    pub parametric_pct: f64,
    pub embedding_dim: usize,
    pub flawed_variants: bool,
}

impl Default for MockConfig {
    fn default() -> Self {
        Self { parametric_pct: 50.0, embedding_dim: crate::gateway::mock::DEFAULT_EMBEDDING_DIM, flawed_variants: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub backend: BackendKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub run_dir: Option<PathBuf>,
    pub corpus: CorpusConfig,
    pub atoms: AtomsConfig,
    pub redundancy: RedundancyConfig,
    pub qgen: QgenConfig,
    pub retrieval: RetrievalConfig,
    pub e2e: E2eConfig,
    pub ablation: AblationConfig,
    pub gateway: GatewayConfig,
    pub models: ModelIds,
    pub pricing: Pricing,
    pub provider: ProviderConfig,
    pub mock: MockConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            backend: BackendKind::Mock,
            run_dir: None,
            corpus: CorpusConfig::default(),
            atoms: AtomsConfig::default(),
            redundancy: RedundancyConfig::default(),
            qgen: QgenConfig::default(),
            retrieval: RetrievalConfig::default(),
            e2e: E2eConfig::default(),
            ablation: AblationConfig::default(),
            gateway: GatewayConfig::default(),
            models: ModelIds::default(),
            pricing: Pricing::default(),
            provider: ProviderConfig::default(),
            mock: MockConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        Self::from_toml(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    /// Digest of everything except the run directory.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.run_dir = None;
        sha256_hex(c.to_toml().as_bytes())
    }

    pub fn validate(&self) -> Result<(), String> {
        let mut errs = Vec::new();
        if self.corpus.sources.is_empty() {
            errs.push("corpus.sources is empty".to_string());
        }
        for s in &self.corpus.sources {
            match (&s.path, &s.fixture) {
                (Some(_), None) => {}
                (None, Some(f)) if FIXTURES.contains(&f.as_str()) => {}
                (None, Some(f)) => errs.push(format!("unknown fixture {f:?}, expected one of {FIXTURES:?}")),
                _ => errs.push(format!("source for domain {:?} needs exactly one of path or fixture", s.domain)),
            }
            if s.domain.trim().is_empty() || s.domain == "all" {
                errs.push(format!("invalid domain tag {:?}", s.domain));
            }
        }
        if self.corpus.budget < MIN_BUDGET {
            errs.push(format!("corpus.budget must be >= {MIN_BUDGET}"));
        }
        if self.atoms.top_k == 0 {
            errs.push("atoms.top_k must be >= 1".into());
        }
        if !(-1.0..=1.0).contains(&self.redundancy.tau) {
            errs.push("redundancy.tau must be in [-1, 1]".into());
        }
        let q = &self.qgen;
        if q.hops.is_empty() || q.hops.iter().any(|h| !(1..=4).contains(h)) {
            errs.push("qgen.hops must be a non-empty subset of 1..=4".into());
        }
        if q.pool_sample == 0 || q.candidates == 0 {
            errs.push("qgen.pool_sample and qgen.candidates must be >= 1".into());
        }
        let r = &self.retrieval;
        if r.k == 0 || r.depth < r.k {
            errs.push("retrieval.k must be >= 1 and retrieval.depth >= retrieval.k".into());
        }
        if r.retrievers.is_empty() || r.retrievers.iter().any(|x| !RETRIEVERS.contains(&x.as_str())) {
            errs.push(format!("retrieval.retrievers must be drawn from {RETRIEVERS:?}"));
        }
        if self.e2e.k == 0 {
            errs.push("e2e.k must be >= 1".into());
        }
        let a = &self.ablation;
        if a.runs == 0 || a.candidates < 2 || a.gold == 0 || a.gold >= a.candidates {
            errs.push("ablation needs runs >= 1 and 1 <= gold < candidates".into());
        }
        if self.gateway.max_in_flight == 0 {
            errs.push("gateway.max_in_flight must be >= 1".into());
        }
        if !(0.0..=100.0).contains(&self.mock.parametric_pct) {
            errs.push("mock.parametric_pct must be in [0, 100]".into());
        }
        if self.mock.embedding_dim == 0 {
            errs.push("mock.embedding_dim must be >= 1".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs.join("; "))
        }
    }
}
