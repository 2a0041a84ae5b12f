//! Ingest a directory of text files and split it into token-bounded chunks.
//!
//! cargo run --example chunking -- [dir] [budget]

use redbench::corpus::{ingest, Chunker};
use redbench::fixtures;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let dir = match args.next() {
        Some(d) => std::path::PathBuf::from(d),
        None => {
            let tmp = std::env::temp_dir().join("redbench-chunking");
            fixtures::write_corpus(&tmp, &fixtures::toy_corpus())?;
            tmp
        }
    };
    let budget: usize = args.next().map(|b| b.parse()).transpose()?.unwrap_or(32);

    let got = ingest(&dir, "General-Wiki")?;
    for e in &got.errors {
        eprintln!("skipped {}: {}", e.source_name, e.reason);
    }
    let chunker = Chunker::new(budget)?;
    for doc in &got.documents {
        println!("{} ({})", doc.source_name, doc.doc_id);
        for c in chunker.chunk_document(doc) {
            println!("  {:<28} {:>3} tok  {}", c.chunk_id, c.token_count, c.text);
        }
    }
    Ok(())
}
