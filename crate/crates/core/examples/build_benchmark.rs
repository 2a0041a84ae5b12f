//! Benchmark construction in one process: atomic pool, equivalence map, then
//! multi-hop question generation with the logical filter and ranking.

use std::collections::HashMap;

use redbench::atomics::build_pool;
use redbench::corpus::{document_id, Chunker, Document};
use redbench::fixtures::toy_corpus;
use redbench::gateway::Gateway;
use redbench::qgen::{run_generation, QgenConfig};
use redbench::redundancy::{track, RedundancyConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let docs: Vec<Document> = toy_corpus()
        .into_iter()
        .map(|(name, body)| Document { doc_id: document_id(&name, body.as_bytes()), domain_tag: "General-Wiki".into(), source_name: name, body })
        .collect();
    let chunks = Chunker::new(512)?.chunk_all(&docs);
    let gw = Gateway::mock(42);
    let build = build_pool(&gw, &chunks, 3);
    let tracked = track(&gw, &build.pool.atoms, &build.atoms, &RedundancyConfig::default())?;
    let chunk_text: HashMap<&str, &str> = chunks.iter().map(|c| (c.chunk_id.as_str(), c.text.as_str())).collect();

    let config = QgenConfig { hops: vec![1, 2, 3], samples_per_hop: 6, ..QgenConfig::default() };
    let run = run_generation(&gw, &build.pool, &chunk_text, &tracked.map, &config, 42)?;
    for item in &run.items {
        println!("[{}] {}\n    gold {:?}", item.item_id, item.question, item.gold_groups);
    }
    for row in &run.stats.rows {
        println!("{} hop {}: {}/{} samples kept, all-pass {:.1}%", row.domain, row.hop, row.retained, row.samples, row.all_pass_rate);
    }
    println!("{} items, {} model calls", run.items.len(), gw.cost_report().total.calls);
    Ok(())
}
