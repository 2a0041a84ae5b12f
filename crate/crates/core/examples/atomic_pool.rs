//! Atomic units per chunk: extraction, the validity filter, and top-k
//! selection by fused per-criterion rankings.

use redbench::atomics::build_pool;
use redbench::corpus::{document_id, Chunker, Document};
use redbench::fixtures::toy_corpus;
use redbench::gateway::Gateway;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let docs: Vec<Document> = toy_corpus()
        .into_iter()
        .map(|(name, body)| Document { doc_id: document_id(&name, body.as_bytes()), domain_tag: "General-Wiki".into(), source_name: name, body })
        .collect();
    let chunks = Chunker::new(512)?.chunk_all(&docs);
    let build = build_pool(&Gateway::mock(42), &chunks, 3);
    for a in &build.atoms {
        let mark = if a.selected { "*" } else if a.is_valid() { "+" } else { "-" };
        let score = a.crrf_score.map_or_else(|| "     ".to_string(), |s| format!("{s:.3}"));
        println!("{mark} {score} {:<34} {}", a.atom_id, a.text);
    }
    println!("\n* selected  + valid  - rejected");
    for row in &build.stats.rows {
        println!("{}: {} atoms, {:.1}% valid, {} selected", row.domain, row.total_atoms, row.valid_pass_rate, row.selected_atoms);
    }
    Ok(())
}
