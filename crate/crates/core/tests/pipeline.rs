use std::collections::BTreeMap;
use std::path::Path;

use redbench::pipeline::{file_digest, Overrides, Pipeline, PipelineError, RunConfig, RunLock, StageName, LOCK_FILE, MANIFEST_FILE};
use redbench::redundancy::CorpusOverlapStats;

const TOY: &str = r#"
seed = 42
[[corpus.sources]]
domain = "General-Wiki"
fixture = "toy"
[qgen]
hops = [1, 2]
samples_per_hop = 6
[retrieval]
k = 3
[ablation]
instances = 6
runs = 2
"#;

fn pipeline(toml: &str, dir: &Path, force: bool) -> Pipeline {
    let config = RunConfig::from_toml(toml).unwrap();
    let overrides = Overrides { run_dir: Some(dir.join("run")), ..Default::default() };
    Pipeline::new(config, dir, overrides, force).unwrap()
}

fn digests(p: &Pipeline) -> BTreeMap<String, String> {
    p.manifest().unwrap().latest().unwrap().artifact_digests()
}

#[test]
fn full_runs_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (pa, pb) = (pipeline(TOY, a.path(), false), pipeline(TOY, b.path(), false));
    pa.run_all().unwrap();
    pb.run_all().unwrap();
    let (da, db) = (digests(&pa), digests(&pb));
    assert!(da.contains_key("metrics.json") && da.contains_key("e2e_report.json") && da.contains_key("costs.json"));
    assert_eq!(da, db);
}

#[test]
fn manifest_lists_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let p = pipeline(TOY, dir.path(), false);
    p.run_all().unwrap();
    let recorded = digests(&p);
    let mut on_disk = Vec::new();
    for entry in walk(p.run_dir()) {
        let name = entry.strip_prefix(p.run_dir()).unwrap().to_string_lossy().replace('\\', "/");
        if name != MANIFEST_FILE {
            on_disk.push(name.clone());
            assert_eq!(recorded.get(&name), Some(&file_digest(&entry).unwrap()), "{name}");
        }
    }
    assert_eq!(on_disk.len(), recorded.len());
    assert!(!p.run_dir().join(LOCK_FILE).exists());
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let path = e.unwrap().path();
        if path.is_dir() {
            out.extend(walk(&path));
        } else {
            out.push(path);
        }
    }
    out
}

#[test]
fn generate_before_redundancy_names_the_missing_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let p = pipeline(TOY, dir.path(), false);
    p.run(StageName::Ingest).unwrap();
    p.run(StageName::Atoms).unwrap();
    let err = p.run(StageName::Generate).unwrap_err();
    assert!(matches!(&err, PipelineError::MissingUpstream { artifact, .. } if artifact == "equivalence.jsonl"), "{err}");
    assert!(err.to_string().contains("equivalence.jsonl"));
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn rerun_is_a_noop_unless_forced() {
    let dir = tempfile::tempdir().unwrap();
    let p = pipeline(TOY, dir.path(), false);
    assert!(!p.run(StageName::Ingest).unwrap().skipped);
    let again = p.run(StageName::Ingest).unwrap();
    assert!(again.skipped);
    assert_eq!(p.manifest().unwrap().versions.len(), 1);
    let forced = pipeline(TOY, dir.path(), true).run(StageName::Ingest).unwrap();
    assert!(!forced.skipped);
    assert_eq!(forced.artifacts, again.artifacts);
    assert_eq!(p.manifest().unwrap().versions.len(), 2);
}

#[test]
fn changed_config_needs_force() {
    let dir = tempfile::tempdir().unwrap();
    pipeline(TOY, dir.path(), false).run(StageName::Ingest).unwrap();
    let changed = TOY.replace("seed = 42", "seed = 43");
    let err = pipeline(&changed, dir.path(), false).run(StageName::Atoms).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    pipeline(&changed, dir.path(), true).run(StageName::Atoms).unwrap();
}

#[test]
fn tampered_upstream_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let p = pipeline(TOY, dir.path(), false);
    p.run(StageName::Ingest).unwrap();
    std::fs::write(p.run_dir().join("chunks.jsonl"), "").unwrap();
    let err = p.run(StageName::Atoms).unwrap_err();
    assert!(matches!(err, PipelineError::StaleUpstream { .. }));
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn locked_run_dir_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = pipeline(TOY, dir.path(), false);
    let _held = RunLock::acquire(p.run_dir()).unwrap();
    let err = p.run(StageName::Ingest).unwrap_err();
    assert!(matches!(err, PipelineError::Locked(_)));
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn planted_stats_report_forty_percent() {
    let dir = tempfile::tempdir().unwrap();
    let p = pipeline("[[corpus.sources]]\ndomain = \"Planted\"\nfixture = \"planted\"\n", dir.path(), false);
    for s in [StageName::Ingest, StageName::Atoms, StageName::Redundancy, StageName::Stats] {
        p.run(s).unwrap();
    }
    let stats: CorpusOverlapStats = redbench::io::read_json(&p.run_dir().join("overlap_stats.json")).unwrap();
    assert_eq!(stats.rows[0].redundancy, Some(40.0));
    assert_eq!(stats.rows[0].target_count, 100);
}

#[test]
fn provider_without_credentials_exits_four() {
    let dir = tempfile::tempdir().unwrap();
    let toml = TOY.replacen("seed = 42", "seed = 42\nbackend = \"provider\"", 1) + "[provider]\napi_key_env = \"REDBENCH_TEST_UNSET_KEY\"\n";
    let p = pipeline(&toml, dir.path(), false);
    p.run(StageName::Ingest).unwrap();
    let err = p.run(StageName::Atoms).unwrap_err();
    assert_eq!(err.exit_code(), 4, "{err}");
}

#[test]
fn missing_corpus_path_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = pipeline("[[corpus.sources]]\ndomain = \"X\"\npath = \"nowhere\"\n", dir.path(), false);
    assert_eq!(p.run(StageName::Ingest).unwrap_err().exit_code(), 2);
}
