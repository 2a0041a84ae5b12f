//! Small text helpers shared by the mock backend, the judges and BM25.

use sha2::{Digest, Sha256};

/// Collapses every whitespace run to a single space and trims both ends.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Lowercases, drops punctuation and collapses whitespace. Used for
/// containment and exact-match comparisons.
pub fn normalize_for_match(text: &str) -> String {
    let cleaned: String = text
        .chars()
        .map(|c| {
            if c.is_alphanumeric() {
                c.to_lowercase().next().unwrap_or(c)
            } else if c == '\'' || c == '\u{2019}' {
                '\0'
            } else {
                ' '
            }
        })
        .filter(|c| *c != '\0')
        .collect();
    normalize_whitespace(&cleaned)
}

const STOPWORDS: &[&str] = &[
    "a", "about", "after", "all", "also", "an", "and", "any", "are", "as", "at", "be", "been",
    "before", "being", "between", "both", "but", "by", "can", "could", "did", "do", "does", "for",
    "from", "had", "has", "have", "how", "in", "into", "is", "it", "its", "more", "most", "not",
    "of", "on", "or", "other", "over", "than", "that", "the", "their", "them", "then", "there",
    "these", "they", "this", "those", "through", "to", "under", "up", "was", "were", "what",
    "when", "where", "which", "while", "who", "whom", "why", "will", "with", "would",
];

pub fn is_stopword(word: &str) -> bool {
    STOPWORDS.binary_search(&word).is_ok()
}

/// Lowercased alphanumeric words with a trailing possessive stripped.
pub fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '\'' || c == '\u{2019}'))
        .filter(|w| !w.is_empty())
        .map(|w| {
            let lower = w.to_lowercase();
            let lower = lower.trim_matches(|c| c == '\'' || c == '\u{2019}');
            lower
                .strip_suffix("'s")
                .or_else(|| lower.strip_suffix("\u{2019}s"))
                .unwrap_or(lower)
                .to_string()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

/// Content keywords: words of length >= 3 that are not stopwords and do not
/// mix letters with digits (identifier stamps such as `q3d9f2a` are ignored).
pub fn keywords(text: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for w in words(text) {
        let has_alpha = w.chars().any(char::is_alphabetic);
        let has_digit = w.chars().any(|c| c.is_ascii_digit());
        if w.chars().count() < 3 || is_stopword(&w) || (has_alpha && has_digit && !is_unit_number(&w)) {
            continue;
        }
        if !out.contains(&w) {
            out.push(w);
        }
    }
    out
}

// "100c", "52bn", "3rd": a leading number followed by a short unit suffix.
fn is_unit_number(w: &str) -> bool {
    let digits = w.chars().take_while(|c| c.is_ascii_digit()).count();
    let rest = &w[digits..];
    digits > 0 && rest.len() <= 2 && rest.chars().all(char::is_alphabetic)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// First 8 bytes of a sha256 over the given parts (separated by 0x1f) as u64.
pub fn digest_u64(parts: &[&[u8]]) -> u64 {
    let mut hasher = Sha256::new();
    for (i, part) in parts.iter().enumerate() {
        if i > 0 {
            hasher.update([0x1f]);
        }
        hasher.update(part);
    }
    let out = hasher.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("sha256 has 32 bytes"))
}

/// Uniform value in [0, 1) derived from the digest of `parts`.
pub fn unit_hash(parts: &[&[u8]]) -> f64 {
    (digest_u64(parts) >> 11) as f64 / (1u64 << 53) as f64
}
