//! Staged runs over a run directory. Each stage reads its upstream artifacts,
//! writes its own, and records their digests in a new manifest version.

mod config;
mod manifest;

pub use config::{
    AblationConfig, AtomsConfig, BackendKind, CorpusConfig, GatewayConfig, MockConfig, RetrievalConfig, RunConfig,
    SourceConfig,
};
pub use manifest::{file_digest, Manifest, ManifestVersion, RunLock, StageRecord, LOCK_FILE, MANIFEST_FILE};

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::atomics::{build_pool, AtomicUnit, SkipRecord, ValidInformationPool};
use crate::corpus::{self, Chunk, Chunker, Document, IngestError};
use crate::crrf::ablation::{full_grid, load_dataset, run_ablation, AblationError};
use crate::e2e::{e2e_report, run_e2e, E2EJudgment};
use crate::evalkit::{report, run_bm25, run_dense, Bm25Index, Bm25Params, DenseError, DenseIndex, ItemMetrics, RunRecord};
use crate::fixtures;
use crate::gateway::{CostReport, Gateway, GatewayError, MockBackend, MockRules, ProviderBackend, Stage as CostStage};
use crate::qgen::{run_generation, BenchmarkItem, QgenError};
use crate::redundancy::{track, CorpusOverlapStats, EquivalenceMap, EquivalenceRecord, RedundancyError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StageName {
    Ingest,
    Atoms,
    Redundancy,
    Generate,
    Stats,
    Retrieve,
    Evaluate,
    E2e,
    Ablate,
    Cost,
}

impl StageName {
    pub const ALL: [StageName; 10] = [
        StageName::Ingest,
        StageName::Atoms,
        StageName::Redundancy,
        StageName::Generate,
        StageName::Stats,
        StageName::Retrieve,
        StageName::Evaluate,
        StageName::E2e,
        StageName::Ablate,
        StageName::Cost,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StageName::Ingest => "ingest",
            StageName::Atoms => "atoms",
            StageName::Redundancy => "redundancy",
            StageName::Generate => "generate",
            StageName::Stats => "stats",
            StageName::Retrieve => "retrieve",
            StageName::Evaluate => "evaluate",
            StageName::E2e => "e2e",
            StageName::Ablate => "ablate",
            StageName::Cost => "cost",
        }
    }

    /// Upstream artifacts, checked in this order.
    pub fn requires(self) -> &'static [&'static str] {
        match self {
            StageName::Ingest | StageName::Ablate | StageName::Cost => &[],
            StageName::Atoms => &["chunks.jsonl"],
            StageName::Redundancy => &["atoms.jsonl", "pool.jsonl"],
            StageName::Generate => &["chunks.jsonl", "pool.jsonl", "equivalence.jsonl", "equivalence_map.json"],
            StageName::Stats => &["chunks.jsonl", "pool.jsonl", "equivalence_map.json"],
            StageName::Retrieve => &["chunks.jsonl", "items.jsonl"],
            StageName::Evaluate => &["atoms.jsonl", "items.jsonl", "run.jsonl"],
            StageName::E2e => &["chunks.jsonl", "items.jsonl", "run.jsonl", "item_metrics.jsonl"],
        }
    }

    fn cost_stage(self) -> Option<CostStage> {
        match self {
            StageName::Atoms => Some(CostStage::AtomicExtraction),
            StageName::Redundancy => Some(CostStage::RedundancyTracking),
            StageName::Generate => Some(CostStage::QuestionGeneration),
            StageName::E2e => Some(CostStage::E2e),
            StageName::Ablate => Some(CostStage::ValidSelection),
            StageName::Stats | StageName::Retrieve => Some(CostStage::Embedding),
            _ => None,
        }
    }
}

impl fmt::Display for StageName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StageName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StageName::ALL.into_iter().find(|st| st.as_str() == s).ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("config digest {current} differs from the run directory's {recorded}; pass --force to continue")]
    DigestMismatch { recorded: String, current: String },
    #[error("run directory {0} is locked by another process (remove {LOCK_FILE} if stale)")]
    Locked(String),
    #[error("stage `{stage}` needs {artifact}{}", producer.map(|p| format!(" from stage `{p}`; run it first")).unwrap_or_default())]
    MissingUpstream { stage: StageName, artifact: String, producer: Option<&'static str> },
    #[error("{artifact} changed since it was recorded; rerun stage `{producer}`")]
    StaleUpstream { artifact: String, producer: String },
    #[error("provider failure: {0}")]
    Provider(String),
    #[error("stage `{stage}` failed: {reason}")]
    Stage { stage: StageName, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

impl PipelineError {
    /// 2 validation, 3 upstream, 4 provider, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::DigestMismatch { .. } | PipelineError::Locked(_) => 2,
            PipelineError::MissingUpstream { .. } | PipelineError::StaleUpstream { .. } => 3,
            PipelineError::Provider(_) => 4,
            PipelineError::Stage { .. } | PipelineError::Io { .. } => 1,
        }
    }

    fn gateway(stage: StageName, e: GatewayError) -> Self {
        if e.is_provider_failure() || matches!(e, GatewayError::Config(_)) {
            PipelineError::Provider(e.to_string())
        } else {
            PipelineError::Stage { stage, reason: e.to_string() }
        }
    }
}

fn producer_of(artifact: &str) -> Option<&'static str> {
    Some(match artifact {
        "documents.jsonl" | "chunks.jsonl" => "ingest",
        "atoms.jsonl" | "pool.jsonl" => "atoms",
        "equivalence.jsonl" | "equivalence_map.json" => "redundancy",
        "items.jsonl" => "generate",
        "run.jsonl" => "retrieve",
        "item_metrics.jsonl" => "evaluate",
        _ => return None,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageOutcome {
    pub stage: StageName,
    pub skipped: bool,
    pub artifacts: BTreeMap<String, String>,
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub backend: Option<BackendKind>,
    pub run_dir: Option<PathBuf>,
}

pub struct Pipeline {
    config: RunConfig,
    base_dir: PathBuf,
    run_dir: PathBuf,
    force: bool,
}

type Res<T> = Result<T, PipelineError>;

impl Pipeline {
    /// `base_dir` anchors relative paths in the config.
    pub fn new(mut config: RunConfig, base_dir: &Path, overrides: Overrides, force: bool) -> Res<Self> {
        if let Some(s) = overrides.seed {
            config.seed = s;
        }
        if let Some(b) = overrides.backend {
            config.backend = b;
        }
        if let Some(d) = overrides.run_dir {
            config.run_dir = Some(d);
        }
        config.validate().map_err(PipelineError::Config)?;
        let run_dir = base_dir.join(config.run_dir.clone().unwrap_or_else(|| PathBuf::from("run")));
        Ok(Self { config, base_dir: base_dir.to_path_buf(), run_dir, force })
    }

    pub fn from_file(path: &Path, overrides: Overrides, force: bool) -> Res<Self> {
        let config = RunConfig::load(path).map_err(PipelineError::Config)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::new(config, &base, overrides, force)
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn run_dir(&self) -> &Path {
        &self.run_dir
    }

    pub fn manifest(&self) -> Res<Manifest> {
        Manifest::load(&self.run_dir).map_err(|e| io_err(&self.run_dir.join(MANIFEST_FILE), e))
    }

    /// Runs the ingest-to-cost chain in order.
    pub fn run_all(&self) -> Res<Vec<StageOutcome>> {
        StageName::ALL.iter().map(|&s| self.run(s)).collect()
    }

    pub fn run(&self, stage: StageName) -> Res<StageOutcome> {
        let _lock = RunLock::acquire(&self.run_dir).map_err(|e| match e.kind() {
            io::ErrorKind::AlreadyExists => PipelineError::Locked(self.run_dir.display().to_string()),
            _ => io_err(&self.run_dir, e),
        })?;
        let mut manifest = self.manifest()?;
        let digest = self.config.digest();
        if let Some(latest) = manifest.latest() {
            if latest.config_digest != digest && !self.force {
                return Err(PipelineError::DigestMismatch { recorded: latest.config_digest.clone(), current: digest });
            }
        }
        let inputs = self.check_upstream(stage, manifest.latest())?;
        if !self.force {
            if let Some(done) = self.completed(stage, manifest.latest(), &digest, &inputs) {
                tracing::info!("{stage}: up to date");
                return Ok(StageOutcome { stage, skipped: true, artifacts: done });
            }
        }

        tracing::info!("{stage}: running");
        let written = self.execute(stage)?;
        let mut artifacts = BTreeMap::new();
        for name in written {
            let path = self.run_dir.join(&name);
            artifacts.insert(name, file_digest(&path).map_err(|e| io_err(&path, e))?);
        }

        let mut stages = manifest.latest().map(|v| v.stages.clone()).unwrap_or_default();
        stages.insert(
            stage.to_string(),
            StageRecord { config_digest: digest.clone(), completed_at: manifest::now_secs(), inputs, artifacts: artifacts.clone() },
        );
        manifest.versions.push(ManifestVersion {
            version: manifest.versions.len() as u32 + 1,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            created_at: manifest::now_secs(),
            command: stage.to_string(),
            seed: self.config.seed,
            backend: format!("{:?}", self.config.backend).to_lowercase(),
            config_digest: digest,
            config: self.config.to_toml(),
            stages,
        });
        manifest.save(&self.run_dir).map_err(|e| io_err(&self.run_dir.join(MANIFEST_FILE), e))?;
        Ok(StageOutcome { stage, skipped: false, artifacts })
    }

    fn check_upstream(&self, stage: StageName, latest: Option<&ManifestVersion>) -> Res<BTreeMap<String, String>> {
        let recorded = latest.map(ManifestVersion::artifact_digests).unwrap_or_default();
        let mut inputs = BTreeMap::new();
        for &artifact in stage.requires() {
            let path = self.run_dir.join(artifact);
            let missing = || PipelineError::MissingUpstream { stage, artifact: artifact.to_string(), producer: producer_of(artifact) };
            let Some(expected) = recorded.get(artifact) else { return Err(missing()) };
            if !path.exists() {
                return Err(missing());
            }
            let actual = file_digest(&path).map_err(|e| io_err(&path, e))?;
            if &actual != expected {
                return Err(PipelineError::StaleUpstream {
                    artifact: artifact.to_string(),
                    producer: producer_of(artifact).unwrap_or("unknown").to_string(),
                });
            }
            inputs.insert(artifact.to_string(), actual);
        }
        Ok(inputs)
    }

    fn completed(
        &self,
        stage: StageName,
        latest: Option<&ManifestVersion>,
        digest: &str,
        inputs: &BTreeMap<String, String>,
    ) -> Option<BTreeMap<String, String>> {
        let rec = latest?.stages.get(stage.as_str())?;
        if rec.config_digest != digest || &rec.inputs != inputs || stage == StageName::Cost {
            return None;
        }
        let intact = rec.artifacts.iter().all(|(name, d)| file_digest(&self.run_dir.join(name)).is_ok_and(|x| &x == d));
        intact.then(|| rec.artifacts.clone())
    }

    fn execute(&self, stage: StageName) -> Res<Vec<String>> {
        let mut w = Writer { dir: &self.run_dir, written: Vec::new() };
        match stage {
            StageName::Ingest => self.ingest(&mut w)?,
            StageName::Atoms => self.atoms(&mut w)?,
            StageName::Redundancy => self.redundancy(&mut w)?,
            StageName::Generate => self.generate(&mut w)?,
            StageName::Stats => self.stats(&mut w)?,
            StageName::Retrieve => self.retrieve(&mut w)?,
            StageName::Evaluate => self.evaluate(&mut w)?,
            StageName::E2e => self.e2e(&mut w)?,
            StageName::Ablate => self.ablate(&mut w)?,
            StageName::Cost => self.cost(&mut w)?,
        }
        Ok(w.written)
    }

    fn read<T: DeserializeOwned>(&self, name: &str) -> Res<Vec<T>> {
        let path = self.run_dir.join(name);
        crate::io::read_jsonl(&path).map_err(|e| io_err(&path, e))
    }

    fn read_one<T: DeserializeOwned>(&self, name: &str) -> Res<T> {
        let path = self.run_dir.join(name);
        crate::io::read_json(&path).map_err(|e| io_err(&path, e))
    }

    /// A gateway for one stage. Mock rules only apply to the mock backend.
    pub fn gateway(&self, rules: MockRules) -> Res<Gateway> {
        let c = &self.config;
        let backend: Box<dyn crate::gateway::Backend> = match c.backend {
            BackendKind::Mock => {
                let mut rules = rules;
                rules.flawed_variants = c.mock.flawed_variants;
                let mock = MockBackend::new(rules);
                for m in [&c.models.embedding, &c.redundancy.embedding_model, &c.retrieval.dense_model] {
                    mock.set_embedding_dim(m, c.mock.embedding_dim);
                }
                Box::new(mock)
            }
            BackendKind::Provider => Box::new(
                ProviderBackend::from_env(c.provider.clone()).map_err(|e| PipelineError::Provider(e.to_string()))?,
            ),
        };
        Ok(Gateway::builder(backend)
            .models(c.models.clone())
            .pricing(c.pricing.clone())
            .retry(c.gateway.retry)
            .max_in_flight(c.gateway.max_in_flight)
            .seed(c.seed)
            .log_transcripts(c.gateway.log_transcripts)
            .build())
    }

    fn write_logs(&self, stage: StageName, gw: &Gateway, w: &mut Writer) -> Res<()> {
        w.json(&format!("logs/{stage}.costs.json"), &gw.cost_report())?;
        if self.config.gateway.log_transcripts {
            w.jsonl(&format!("logs/{stage}.transcripts.jsonl"), &gw.transcripts())?;
        }
        Ok(())
    }

    fn ingest(&self, w: &mut Writer) -> Res<()> {
        let mut documents: Vec<Document> = Vec::new();
        let mut errors: Vec<IngestError> = Vec::new();
        for src in &self.config.corpus.sources {
            if let Some(fixture) = &src.fixture {
                let docs = if fixture == "planted" { fixtures::planted_corpus() } else { fixtures::toy_corpus() };
                documents.extend(docs.into_iter().map(|(name, body)| Document {
                    doc_id: corpus::document_id(&name, body.as_bytes()),
                    domain_tag: src.domain.clone(),
                    source_name: name,
                    body,
                }));
            } else if let Some(path) = &src.path {
                let root = self.base_dir.join(path);
                let got = corpus::ingest(&root, &src.domain).map_err(|e| PipelineError::Config(e.to_string()))?;
                documents.extend(got.documents);
                errors.extend(got.errors);
            }
        }
        let chunker = Chunker::new(self.config.corpus.budget).map_err(|e| PipelineError::Config(e.to_string()))?;
        let chunks = chunker.chunk_all(&documents);
        tracing::info!("ingested {} documents into {} chunks ({} skipped)", documents.len(), chunks.len(), errors.len());
        w.jsonl("documents.jsonl", &documents)?;
        w.jsonl("chunks.jsonl", &chunks)?;
        w.jsonl("ingest_errors.jsonl", &errors)
    }

    fn atoms(&self, w: &mut Writer) -> Res<()> {
        let chunks: Vec<Chunk> = self.read("chunks.jsonl")?;
        let gw = self.gateway(MockRules::default())?;
        let build = build_pool(&gw, &chunks, self.config.atoms.top_k);
        tracing::info!("{} atoms, {} in the pool, {} chunks skipped", build.atoms.len(), build.pool.len(), build.skipped.len());
        w.jsonl("atoms.jsonl", &build.atoms)?;
        w.jsonl("pool.jsonl", &build.pool.atoms)?;
        w.jsonl::<SkipRecord>("atom_skips.jsonl", &build.skipped)?;
        w.json("atomics_stats.json", &build.stats)?;
        self.write_logs(StageName::Atoms, &gw, w)
    }

    fn redundancy(&self, w: &mut Writer) -> Res<()> {
        let stage = StageName::Redundancy;
        let atoms: Vec<AtomicUnit> = self.read("atoms.jsonl")?;
        let pool: Vec<AtomicUnit> = self.read("pool.jsonl")?;
        let gw = self.gateway(MockRules::default())?;
        let tracked = track(&gw, &pool, &atoms, &self.config.redundancy).map_err(|e| redundancy_err(stage, e))?;
        w.jsonl::<EquivalenceRecord>("equivalence.jsonl", &tracked.records)?;
        w.json("equivalence_map.json", &tracked.map)?;
        self.write_logs(stage, &gw, w)
    }

    fn generate(&self, w: &mut Writer) -> Res<()> {
        let stage = StageName::Generate;
        let chunks: Vec<Chunk> = self.read("chunks.jsonl")?;
        let pool = ValidInformationPool::from_atoms(self.read::<AtomicUnit>("pool.jsonl")?);
        let map: EquivalenceMap = self.read_one("equivalence_map.json")?;
        let chunk_text: HashMap<&str, &str> = chunks.iter().map(|c| (c.chunk_id.as_str(), c.text.as_str())).collect();
        let gw = self.gateway(MockRules::default())?;
        let run = run_generation(&gw, &pool, &chunk_text, &map, &self.config.qgen, self.config.seed).map_err(|e| match e {
            QgenError::Gateway(g) => PipelineError::gateway(stage, g),
            other => PipelineError::Stage { stage, reason: other.to_string() },
        })?;
        tracing::info!("{} samples, {} candidates, {} items", run.samples.len(), run.candidates.len(), run.items.len());
        w.jsonl("samples.jsonl", &run.samples)?;
        w.jsonl("candidates.jsonl", &run.candidates)?;
        w.jsonl("items.jsonl", &run.items)?;
        w.json("generation_stats.json", &run.stats)?;
        self.write_logs(stage, &gw, w)
    }

    fn stats(&self, w: &mut Writer) -> Res<()> {
        let stage = StageName::Stats;
        let chunks: Vec<Chunk> = self.read("chunks.jsonl")?;
        let pool: Vec<AtomicUnit> = self.read("pool.jsonl")?;
        let map: EquivalenceMap = self.read_one("equivalence_map.json")?;
        let gw = self.gateway(MockRules::default())?;
        let stats = CorpusOverlapStats::compute(&gw, &chunks, &pool, &map, &self.config.redundancy.embedding_model)
            .map_err(|e| redundancy_err(stage, e))?;
        let mut tsv = String::from("domain\tchunks\ttargets\tSim\tRed\n");
        for r in &stats.rows {
            let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.2}"));
            tsv.push_str(&format!("{}\t{}\t{}\t{}\t{}\n", r.domain, r.chunk_count, r.target_count, fmt(r.similarity), fmt(r.redundancy)));
        }
        w.json("overlap_stats.json", &stats)?;
        w.text("overlap_stats.tsv", &tsv)?;
        self.write_logs(stage, &gw, w)
    }

    fn retrieve(&self, w: &mut Writer) -> Res<()> {
        let stage = StageName::Retrieve;
        let chunks: Vec<Chunk> = self.read("chunks.jsonl")?;
        let items: Vec<BenchmarkItem> = self.read("items.jsonl")?;
        let r = &self.config.retrieval;
        let docs = || chunks.iter().map(|c| (c.chunk_id.as_str(), c.text.as_str()));
        let gw = self.gateway(MockRules::default())?;
        let mut runs: Vec<RunRecord> = Vec::new();
        for retriever in &r.retrievers {
            match retriever.as_str() {
                "bm25" => runs.extend(run_bm25(&Bm25Index::build(docs(), Bm25Params::default()), &items, r.depth)),
                _ => {
                    let dense = |e: DenseError| match e {
                        DenseError::Gateway(g) => PipelineError::gateway(stage, g),
                        other => PipelineError::Stage { stage, reason: other.to_string() },
                    };
                    let index = DenseIndex::build(&gw, docs(), &r.dense_model).map_err(dense)?;
                    runs.extend(run_dense(&gw, &index, &items, r.depth).map_err(dense)?);
                }
            }
        }
        w.jsonl("run.jsonl", &runs)?;
        self.write_logs(stage, &gw, w)
    }

    fn evaluate(&self, w: &mut Writer) -> Res<()> {
        let atoms: Vec<AtomicUnit> = self.read("atoms.jsonl")?;
        let items: Vec<BenchmarkItem> = self.read("items.jsonl")?;
        let runs: Vec<RunRecord> = self.read("run.jsonl")?;
        let k = self.config.retrieval.k;
        let (aware, records) = report(&runs, &items, k);
        let origin: HashMap<&str, &str> = atoms.iter().map(|a| (a.atom_id.as_str(), a.chunk_id.as_str())).collect();
        let naive_items: Vec<BenchmarkItem> = items.iter().map(|i| i.naive(&origin)).collect();
        let (naive, _) = report(&runs, &naive_items, k);
        w.jsonl("item_metrics.jsonl", &records)?;
        w.json("metrics.json", &aware)?;
        w.text("metrics.tsv", &aware.to_tsv())?;
        w.json("naive_metrics.json", &naive)?;
        w.text("naive_metrics.tsv", &naive.to_tsv())
    }

    fn e2e(&self, w: &mut Writer) -> Res<()> {
        let stage = StageName::E2e;
        let chunks: Vec<Chunk> = self.read("chunks.jsonl")?;
        let items: Vec<BenchmarkItem> = self.read("items.jsonl")?;
        let runs: Vec<RunRecord> = self.read("run.jsonl")?;
        let metrics: Vec<ItemMetrics> = self.read("item_metrics.jsonl")?;
        let mut rules = MockRules::default();
        rules.learn_fraction(
            items.iter().map(|i| (i.item_id.as_str(), i.question.as_str(), i.answer.as_str())),
            self.config.mock.parametric_pct,
        );
        let gw = self.gateway(rules)?;
        let chunk_text: HashMap<&str, &str> = chunks.iter().map(|c| (c.chunk_id.as_str(), c.text.as_str())).collect();
        let cfg = self.config.e2e;
        let judgments: Vec<E2EJudgment> = run_e2e(&gw, &items, &runs, &chunk_text, &cfg);
        let at_k: Vec<ItemMetrics> = if cfg.k == self.config.retrieval.k {
            metrics
        } else {
            crate::evalkit::item_metrics(&runs, &items, cfg.k).0
        };
        let rep = e2e_report(&judgments, &at_k, cfg.k).map_err(|e| PipelineError::Stage { stage, reason: e.to_string() })?;
        w.jsonl("e2e_judgments.jsonl", &judgments)?;
        w.json("e2e_report.json", &rep)?;
        w.text("e2e_report.tsv", &rep.to_tsv())?;
        self.write_logs(stage, &gw, w)
    }

    fn ablate(&self, w: &mut Writer) -> Res<()> {
        let stage = StageName::Ablate;
        let a = &self.config.ablation;
        let dataset = match &a.dataset {
            Some(p) => {
                let path = self.base_dir.join(p);
                load_dataset(&path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?
            }
            None => fixtures::ablation_dataset(a.instances, a.candidates, a.gold, self.config.seed),
        };
        let gw = self.gateway(MockRules::default())?;
        let rep = run_ablation(&gw, &dataset, &full_grid(), a.runs, self.config.seed).map_err(|e| match e {
            AblationError::Gateway { source, .. } => PipelineError::gateway(stage, source),
            other => PipelineError::Stage { stage, reason: other.to_string() },
        })?;
        w.json("ablation.json", &rep)?;
        w.text("ablation.tsv", &rep.to_tsv())?;
        self.write_logs(stage, &gw, w)
    }

    fn cost(&self, w: &mut Writer) -> Res<()> {
        let mut reports = Vec::new();
        let mut by_stage = BTreeMap::new();
        for s in StageName::ALL.iter().filter(|s| s.cost_stage().is_some()) {
            let path = self.run_dir.join(format!("logs/{s}.costs.json"));
            if path.exists() {
                let r: CostReport = crate::io::read_json(&path).map_err(|e| io_err(&path, e))?;
                by_stage.insert(s.to_string(), r.total);
                reports.push(r);
            }
        }
        let merged = CostReport::merge(&reports);
        let mut tsv = String::from("stage\tcalls\tprompt_tokens\tcompletion_tokens\tcost_usd\tshare_pct\n");
        for (stage, t) in &merged.stages {
            tsv.push_str(&format!(
                "{stage}\t{}\t{}\t{}\t{:.4}\t{:.2}\n",
                t.calls,
                t.prompt_tokens,
                t.completion_tokens,
                t.cost_usd,
                merged.share_pct(*stage)
            ));
        }
        let t = merged.total;
        tsv.push_str(&format!("total\t{}\t{}\t{}\t{:.4}\t100.00\n", t.calls, t.prompt_tokens, t.completion_tokens, t.cost_usd));
        w.json("costs.json", &serde_json::json!({ "merged": merged, "by_command": by_stage }))?;
        w.text("costs.tsv", &tsv)
    }
}

fn redundancy_err(stage: StageName, e: RedundancyError) -> PipelineError {
    match e {
        RedundancyError::Gateway(g) => PipelineError::gateway(stage, g),
        other => PipelineError::Stage { stage, reason: other.to_string() },
    }
}

fn io_err(path: &Path, source: io::Error) -> PipelineError {
    PipelineError::Io { path: path.display().to_string(), source }
}

struct Writer<'a> {
    dir: &'a Path,
    written: Vec<String>,
}

impl Writer<'_> {
    fn done(&mut self, name: &str, r: io::Result<()>) -> Res<()> {
        r.map_err(|e| io_err(&self.dir.join(name), e))?;
        self.written.push(name.to_string());
        Ok(())
    }

    fn jsonl<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Res<()> {
        let r = crate::io::write_jsonl(&self.dir.join(name), rows);
        self.done(name, r)
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Res<()> {
        let r = crate::io::write_json(&self.dir.join(name), value);
        self.done(name, r)
    }

    fn text(&mut self, name: &str, text: &str) -> Res<()> {
        let r = crate::io::atomic_write(&self.dir.join(name), |w| io::Write::write_all(w, text.as_bytes()));
        self.done(name, r)
    }
}
