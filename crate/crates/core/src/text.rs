//! Text tokenization shared by retrieval, metrics and prompt budgeting.

/// Lowercased maximal ASCII-alphanumeric runs.
///
/// This is the single lexical tokenizer used by BM25 indexing, query
/// matching and ROUGE scoring. Non-ASCII characters act as separators.
pub fn word_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_ascii_alphanumeric() {
            cur.push(ch.to_ascii_lowercase());
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Counts and truncates text in model-token units.
///
/// The default counter splits on whitespace; a model-specific subword
/// counter can be plugged in wherever a budget is enforced.
pub trait TokenCounter: Send + Sync {
    fn count(&self, text: &str) -> usize;

    /// Keep the first `max_tokens` tokens of `text`, dropping the tail.
    fn truncate_head(&self, text: &str, max_tokens: usize) -> String;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceCounter;

impl TokenCounter for WhitespaceCounter {
    fn count(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }

    fn truncate_head(&self, text: &str, max_tokens: usize) -> String {
        match whitespace_token_spans(text).get(max_tokens.wrapping_sub(1)) {
            _ if max_tokens == 0 => String::new(),
            Some(&(_, end)) => text[..end].trim_start().to_string(),
            None => text.to_string(),
        }
    }
}

/// Byte spans `(start, end)` of every whitespace-delimited token.
pub fn whitespace_token_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = None;
    for (i, ch) in text.char_indices() {
        if ch.is_whitespace() {
            if let Some(s) = start.take() {
                spans.push((s, i));
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        spans.push((s, text.len()));
    }
    spans
}

/// 64-bit FNV-1a. Stable across platforms and toolchains, which
/// `std::hash` does not promise.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}
