//! BM25 and dense retrieval over generated items, scored with equivalence
//! groups and with origin-only gold side by side.

use std::collections::HashMap;

use redbench::atomics::build_pool;
use redbench::corpus::{document_id, Chunker, Document};
use redbench::evalkit::{report, run_bm25, run_dense, Bm25Index, Bm25Params, DenseIndex};
use redbench::fixtures::{planted_corpus, toy_corpus};
use redbench::gateway::Gateway;
use redbench::qgen::{run_generation, QgenConfig};
use redbench::redundancy::{track, RedundancyConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let docs: Vec<Document> = toy_corpus()
        .into_iter()
        .chain(planted_corpus())
        .map(|(name, body)| Document { doc_id: document_id(&name, body.as_bytes()), domain_tag: "Mixed".into(), source_name: name, body })
        .collect();
    let chunks = Chunker::new(512)?.chunk_all(&docs);
    let gw = Gateway::mock(42);
    let build = build_pool(&gw, &chunks, 3);
    let tracked = track(&gw, &build.pool.atoms, &build.atoms, &RedundancyConfig::default())?;
    let chunk_text: HashMap<&str, &str> = chunks.iter().map(|c| (c.chunk_id.as_str(), c.text.as_str())).collect();
    let config = QgenConfig { hops: vec![1, 2], samples_per_hop: 20, ..QgenConfig::default() };
    let items = run_generation(&gw, &build.pool, &chunk_text, &tracked.map, &config, 42)?.items;

    let docs = || chunks.iter().map(|c| (c.chunk_id.as_str(), c.text.as_str()));
    let mut runs = run_bm25(&Bm25Index::build(docs(), Bm25Params::default()), &items, 100);
    let dense = DenseIndex::build(&gw, docs(), "text-embedding-3-large")?;
    runs.extend(run_dense(&gw, &dense, &items, 100)?);

    let origin: HashMap<&str, &str> = build.atoms.iter().map(|a| (a.atom_id.as_str(), a.chunk_id.as_str())).collect();
    let naive: Vec<_> = items.iter().map(|i| i.naive(&origin)).collect();
    println!("redundancy-aware gold:");
    print!("{}", report(&runs, &items, 3).0.to_tsv());
    println!("\norigin-only gold:");
    print!("{}", report(&runs, &naive, 3).0.to_tsv());
    Ok(())
}
