//! The staged pipeline over a config, as the CLI runs it, printing each
//! artifact digest from the manifest.
//!
//! cargo run --example pipeline_run -- [config.toml]

use std::path::PathBuf;

use redbench::pipeline::{Overrides, Pipeline, RunConfig};

const DEFAULT: &str = r#"
seed = 42
[[corpus.sources]]
domain = "General-Wiki"
fixture = "toy"
[qgen]
hops = [1, 2]
samples_per_hop = 8
[retrieval]
k = 3
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tmp = std::env::temp_dir().join("redbench-pipeline-example");
    let pipeline = match std::env::args().nth(1) {
        Some(path) => Pipeline::from_file(&PathBuf::from(path), Overrides::default(), true)?,
        None => Pipeline::new(RunConfig::from_toml(DEFAULT)?, &tmp, Overrides::default(), true)?,
    };
    for outcome in pipeline.run_all()? {
        println!("{:<11} {} artifacts", outcome.stage.as_str(), outcome.artifacts.len());
    }
    let manifest = pipeline.manifest()?;
    let latest = manifest.latest().expect("at least one stage ran");
    println!("\n{} (version {})", pipeline.run_dir().display(), latest.version);
    for (name, digest) in latest.artifact_digests() {
        println!("  {}  {name}", &digest[..16]);
    }
    Ok(())
}
