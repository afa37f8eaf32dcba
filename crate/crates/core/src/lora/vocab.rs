use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const BOS: u32 = 2;
pub const EOS: u32 = 3;
const SPECIALS: [&str; 4] = ["<pad>", "<unk>", "<s>", "</s>"];

/// Word-level tokenizer over whitespace-separated words.
///
/// Ids are assigned in first-seen order and never change once assigned,
/// so extending the vocabulary keeps earlier encodings valid. Words past
/// `capacity` map to [`UNK`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordTokenizer {
    words: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
    capacity: usize,
}

impl WordTokenizer {
    pub fn new(capacity: usize) -> WordTokenizer {
        let mut t = WordTokenizer {
            words: Vec::new(),
            index: HashMap::new(),
            capacity: capacity.max(SPECIALS.len()),
        };
        for s in SPECIALS {
            t.insert(s);
        }
        t
    }

    pub fn build<'a>(capacity: usize, texts: impl IntoIterator<Item = &'a str>) -> WordTokenizer {
        let mut t = WordTokenizer::new(capacity);
        t.extend(texts);
        t
    }

    fn insert(&mut self, word: &str) {
        if self.words.len() < self.capacity && !self.index.contains_key(word) {
            self.index.insert(word.to_string(), self.words.len() as u32);
            self.words.push(word.to_string());
        }
    }

    pub fn extend<'a>(&mut self, texts: impl IntoIterator<Item = &'a str>) {
        for text in texts {
            for w in text.split_whitespace() {
                self.insert(w);
            }
        }
    }

    /// Rebuilds the lookup table after deserialization.
    pub fn reindex(&mut self) {
        self.index = self
            .words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
    }

    /// Number of assigned ids, specials included.
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.len() == SPECIALS.len()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn id(&self, word: &str) -> u32 {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        text.split_whitespace().map(|w| self.id(w)).collect()
    }

    /// Joins the words of non-special ids with single spaces.
    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter()
            .filter(|&&id| id as usize >= SPECIALS.len())
            .filter_map(|&id| self.words.get(id as usize).map(String::as_str))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_decode_roundtrip() {
        let t = WordTokenizer::build(100, ["complete: a b", "c d"]);
        assert_eq!(t.len(), 4 + 5);
        let ids = t.encode("a b  c");
        assert_eq!(t.decode(&ids), "a b c");
        assert_eq!(t.encode("zzz"), vec![UNK]);
    }

    #[test]
    fn extension_keeps_ids() {
        let mut t = WordTokenizer::build(100, ["x y"]);
        let before = t.encode("x y");
        t.extend(["z x"]);
        assert_eq!(t.encode("x y"), before);
        assert_eq!(t.id("z"), 6);
    }

    #[test]
    fn capacity_overflow_is_unk() {
        let t = WordTokenizer::build(6, ["a b c d"]);
        assert_eq!(t.encode("a b c"), vec![4, 5, UNK]);
    }

    #[test]
    fn serde_roundtrip_after_reindex() {
        let t = WordTokenizer::build(50, ["one two"]);
        let mut back: WordTokenizer =
            serde_json::from_str(&serde_json::to_string(&t).unwrap()).unwrap();
        back.reindex();
        assert_eq!(back, t);
    }
}
