use std::ops::Range;

/// Splits text into sentences, returned as byte spans that cover only
/// non-whitespace content. Spans are ordered and separated by whitespace.
pub trait SentenceSplitter: Send + Sync {
    fn sentence_spans(&self, text: &str) -> Vec<Range<usize>>;

    fn sentences<'a>(&self, text: &'a str) -> Vec<&'a str> {
        self.sentence_spans(text).into_iter().map(|r| &text[r]).collect()
    }
}

/// Terminal punctuation (`.`, `!`, `?`, optionally followed by closing quotes
/// or brackets) ends a sentence when it is followed by whitespace and then an
/// uppercase letter, a digit, or an opening quote/bracket. A period after a
/// known abbreviation or a single-letter initial does not end a sentence.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleSentenceSplitter;

const ABBREVIATIONS: &[&str] = &[
    "approx", "co", "corp", "dr", "e.g", "etc", "i.e", "inc", "jr", "ltd", "mr", "mrs", "ms", "no",
    "prof", "sr", "st", "u.k", "u.s", "u.s.a", "vs",
];

const CLOSERS: &[char] = &['"', '\'', ')', ']', '\u{201d}', '\u{2019}'];
const OPENERS: &[char] = &['"', '\'', '(', '[', '\u{201c}', '\u{2018}'];

impl SentenceSplitter for RuleSentenceSplitter {
    fn sentence_spans(&self, text: &str) -> Vec<Range<usize>> {
        let chars: Vec<(usize, char)> = text.char_indices().collect();
        let mut spans = Vec::new();
        let mut start: Option<usize> = None;
        let mut i = 0;
        while i < chars.len() {
            let (pos, c) = chars[i];
            if start.is_none() && !c.is_whitespace() {
                start = Some(pos);
            }
            if matches!(c, '.' | '!' | '?') {
                let mut j = i + 1;
                while j < chars.len() && (matches!(chars[j].1, '.' | '!' | '?') || CLOSERS.contains(&chars[j].1)) {
                    j += 1;
                }
                let end = chars.get(j).map_or(text.len(), |&(p, _)| p);
                let followed_by_space = j < chars.len() && chars[j].1.is_whitespace();
                if followed_by_space && starts_sentence(&chars, j) && !(c == '.' && is_abbreviation(text, pos)) {
                    if let Some(s) = start.take() {
                        spans.push(s..end);
                    }
                }
                i = j;
                continue;
            }
            i += 1;
        }
        if let Some(s) = start {
            let end = text.trim_end().len();
            if end > s {
                spans.push(s..end);
            }
        }
        spans
    }
}

fn starts_sentence(chars: &[(usize, char)], mut j: usize) -> bool {
    while j < chars.len() && chars[j].1.is_whitespace() {
        j += 1;
    }
    match chars.get(j) {
        Some(&(_, c)) => c.is_uppercase() || c.is_ascii_digit() || OPENERS.contains(&c),
        None => false,
    }
}

// `dot` is the byte offset of a '.'; looks at the word it terminates.
fn is_abbreviation(text: &str, dot: usize) -> bool {
    let before = &text[..dot];
    let word_start = before
        .rfind(|c: char| c.is_whitespace() || OPENERS.contains(&c))
        .map_or(0, |p| p + before[p..].chars().next().map_or(1, char::len_utf8));
    let word = before[word_start..].to_lowercase();
    if word.chars().count() == 1 && word.chars().all(char::is_alphabetic) {
        return true;
    }
    ABBREVIATIONS.contains(&word.as_str())
}
