//! Document ingestion and sentence-respecting, fixed-budget chunking.
//!
//! Chunks are the unit of every gold label downstream, so their ids must be
//! stable: a document id is derived from its path (relative to the ingested
//! root) and a digest of its bytes, and a chunk id from its document id and
//! ordinal.

mod segment;
mod tokenize;

use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use segment::{RuleSentenceSplitter, SentenceSplitter};
pub use tokenize::{terms, RuleTokenizer, TokenCounter};

use crate::text::{normalize_whitespace, sha256_hex};

pub const DEFAULT_BUDGET: usize = 512;
pub const MIN_BUDGET: usize = 16;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("empty corpus: no readable non-empty documents under {0}")]
    EmptyCorpus(String),
    #[error("cannot read source {path}: {source}")]
    Source {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("chunk budget {0} is below the minimum of {MIN_BUDGET}")]
    BudgetTooSmall(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub domain_tag: String,
    pub source_name: String,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub doc_id: String,
    pub ordinal: usize,
    pub text: String,
    pub token_count: usize,
    pub domain_tag: String,
}

/// A file that could not be turned into a document. Ingestion continues.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestError {
    pub source_name: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct Ingested {
    pub documents: Vec<Document>,
    pub errors: Vec<IngestError>,
}

/// Reads every regular file under `source` (recursively, in sorted path order),
/// or the single file if `source` is a file.
pub fn ingest(source: &Path, domain_tag: &str) -> Result<Ingested, CorpusError> {
    let (root, files) = if source.is_file() {
        let root = source.parent().map(Path::to_path_buf).unwrap_or_default();
        (root, vec![source.to_path_buf()])
    } else {
        let mut files = Vec::new();
        collect_files(source, &mut files).map_err(|e| CorpusError::Source {
            path: source.display().to_string(),
            source: e,
        })?;
        files.sort();
        (source.to_path_buf(), files)
    };
    ingest_files(&root, &files, domain_tag)
}

/// Ingests an explicit file list. `root` is stripped from each path to form
/// the stable source name.
pub fn ingest_files(root: &Path, files: &[PathBuf], domain_tag: &str) -> Result<Ingested, CorpusError> {
    let mut out = Ingested::default();
    for path in files {
        let source_name = path
            .strip_prefix(root)
            .unwrap_or(path)
            .to_string_lossy()
            .replace('\\', "/");
        let bytes = match fs::read(path) {
            Ok(b) => b,
            Err(e) => {
                out.errors.push(IngestError { source_name, reason: e.to_string() });
                continue;
            }
        };
        let body = match String::from_utf8(bytes) {
            Ok(s) => s,
            Err(_) => {
                out.errors.push(IngestError { source_name, reason: "not valid UTF-8 text".into() });
                continue;
            }
        };
        if body.trim().is_empty() {
            out.errors.push(IngestError { source_name, reason: "empty after whitespace normalization".into() });
            continue;
        }
        out.documents.push(Document {
            doc_id: document_id(&source_name, body.as_bytes()),
            domain_tag: domain_tag.to_string(),
            source_name,
            body,
        });
    }
    if out.documents.is_empty() {
        return Err(CorpusError::EmptyCorpus(root.display().to_string()));
    }
    Ok(out)
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else if path.is_file() {
            out.push(path);
        }
    }
    Ok(())
}

pub fn document_id(source_name: &str, bytes: &[u8]) -> String {
    let mut keyed = source_name.as_bytes().to_vec();
    keyed.push(0);
    keyed.extend_from_slice(bytes);
    format!("doc-{}", &sha256_hex(&keyed)[..16])
}

pub fn chunk_id(doc_id: &str, ordinal: usize) -> String {
    format!("{doc_id}-c{ordinal:04}")
}

/// Splits documents into chunks of at most `budget` tokens.
pub struct Chunker {
    pub budget: usize,
    tokenizer: Box<dyn TokenCounter>,
    splitter: Box<dyn SentenceSplitter>,
}

impl std::fmt::Debug for Chunker {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Chunker").field("budget", &self.budget).finish_non_exhaustive()
    }
}

impl Chunker {
    pub fn new(budget: usize) -> Result<Self, CorpusError> {
        Self::with_components(budget, Box::new(RuleTokenizer), Box::new(RuleSentenceSplitter))
    }

    pub fn with_components(
        budget: usize,
        tokenizer: Box<dyn TokenCounter>,
        splitter: Box<dyn SentenceSplitter>,
    ) -> Result<Self, CorpusError> {
        if budget < MIN_BUDGET {
            return Err(CorpusError::BudgetTooSmall(budget));
        }
        Ok(Self { budget, tokenizer, splitter })
    }

    pub fn count_tokens(&self, text: &str) -> usize {
        self.tokenizer.count_tokens(text)
    }

    /// Greedy sentence packing: sentences are appended to the current chunk
    /// while it stays within budget. A sentence longer than the budget is
    /// hard-split after its `budget`-th token; its tail continues packing.
    pub fn chunk_document(&self, doc: &Document) -> Vec<Chunk> {
        let body = normalize_whitespace(&doc.body);
        let mut pieces: Vec<(Range<usize>, usize)> = Vec::new();
        for sentence in self.splitter.sentence_spans(&body) {
            let spans = self.tokenizer.token_spans(&body[sentence.clone()]);
            if spans.len() <= self.budget {
                pieces.push((sentence, spans.len()));
                continue;
            }
            for group in spans.chunks(self.budget) {
                let start = sentence.start + group[0].start;
                let end = sentence.start + group[group.len() - 1].end;
                pieces.push((start..end, group.len()));
            }
        }

        let mut chunks = Vec::new();
        let mut current: Option<(Range<usize>, usize)> = None;
        for (span, count) in pieces {
            current = match current {
                Some((open, total)) if total + count <= self.budget => Some((open.start..span.end, total + count)),
                Some(done) => {
                    chunks.push(done);
                    Some((span, count))
                }
                None => Some((span, count)),
            };
        }
        chunks.extend(current);

        chunks
            .into_iter()
            .enumerate()
            .map(|(ordinal, (span, _))| {
                let text = body[span].to_string();
                Chunk {
                    chunk_id: chunk_id(&doc.doc_id, ordinal),
                    doc_id: doc.doc_id.clone(),
                    ordinal,
                    token_count: self.tokenizer.count_tokens(&text),
                    text,
                    domain_tag: doc.domain_tag.clone(),
                }
            })
            .collect()
    }

    pub fn chunk_all(&self, docs: &[Document]) -> Vec<Chunk> {
        docs.iter().flat_map(|d| self.chunk_document(d)).collect()
    }
}

/// Default-tokenizer token count.
pub fn count_tokens(text: &str) -> usize {
    RuleTokenizer.count_tokens(text)
}

/// Default-tokenizer chunking.
pub fn chunk_document(doc: &Document, budget: usize) -> Result<Vec<Chunk>, CorpusError> {
    Ok(Chunker::new(budget)?.chunk_document(doc))
}
