use std::ops::Range;

use unicode_segmentation::UnicodeSegmentation;

/// Counts tokens in a text. Implementations must be deterministic, return 0
/// for empty text, and be additive over whitespace-separated concatenation.
pub trait TokenCounter: Send + Sync {
    /// Byte spans of every token, in order.
    fn token_spans(&self, text: &str) -> Vec<Range<usize>>;

    fn count_tokens(&self, text: &str) -> usize {
        self.token_spans(text).len()
    }
}

/// Default rule-based tokenizer.
///
/// Unicode (UAX #29) word segments containing an alphanumeric character are
/// one token each; whitespace is skipped; any other adjacent segments merge
/// into a single punctuation-run token. `"Water boils."` is three tokens.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleTokenizer;

impl TokenCounter for RuleTokenizer {
    fn token_spans(&self, text: &str) -> Vec<Range<usize>> {
        let mut spans: Vec<Range<usize>> = Vec::new();
        let mut punct: Option<Range<usize>> = None;
        for (start, seg) in text.split_word_bound_indices() {
            let end = start + seg.len();
            if seg.chars().all(char::is_whitespace) {
                if let Some(run) = punct.take() {
                    spans.push(run);
                }
            } else if seg.chars().any(char::is_alphanumeric) {
                if let Some(run) = punct.take() {
                    spans.push(run);
                }
                spans.push(start..end);
            } else {
                punct = Some(match punct {
                    Some(run) => run.start..end,
                    None => start..end,
                });
            }
        }
        if let Some(run) = punct {
            spans.push(run);
        }
        spans
    }
}

/// Lowercased word tokens with punctuation runs dropped; the term unit used
/// by BM25.
pub fn terms(text: &str) -> Vec<String> {
    RuleTokenizer
        .token_spans(text)
        .into_iter()
        .map(|r| &text[r])
        .filter(|t| t.chars().any(char::is_alphanumeric))
        .map(str::to_lowercase)
        .collect()
}
