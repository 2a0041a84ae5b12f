//! Cross-chunk equivalence tracking on a corpus with a known number of
//! repeated facts, plus the corpus-level similarity and redundancy figures.

use redbench::atomics::build_pool;
use redbench::corpus::{document_id, Chunker, Document};
use redbench::fixtures::planted_corpus;
use redbench::gateway::Gateway;
use redbench::redundancy::{track, CorpusOverlapStats, RedundancyConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let docs: Vec<Document> = planted_corpus()
        .into_iter()
        .map(|(name, body)| Document { doc_id: document_id(&name, body.as_bytes()), domain_tag: "Planted".into(), source_name: name, body })
        .collect();
    let chunks = Chunker::new(512)?.chunk_all(&docs);
    let gw = Gateway::mock(42);
    let build = build_pool(&gw, &chunks, 3);
    let config = RedundancyConfig::default();
    let tracked = track(&gw, &build.pool.atoms, &build.atoms, &config)?;

    for r in tracked.records.iter().filter(|r| !r.equivalents.is_empty()).take(4) {
        println!("{} ~ {:?}", r.target_id, r.equivalents);
    }
    let stats = CorpusOverlapStats::compute(&gw, &chunks, &build.pool.atoms, &tracked.map, &config.embedding_model)?;
    for row in stats.rows {
        println!("{}: Sim {:.2}  Red {:.2}  ({} targets)", row.domain, row.similarity.unwrap_or(f64::NAN), row.redundancy.unwrap_or(f64::NAN), row.target_count);
    }
    Ok(())
}
