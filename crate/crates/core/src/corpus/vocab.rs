use std::collections::HashMap;

use sha2::{Digest, Sha256};

use super::InteractionRecord;
use crate::error::{Error, Result};

pub const BOS: usize = 0;
pub const EOS: usize = 1;
pub const PAD: usize = 2;
pub const UNK: usize = 3;

const SPECIALS: [&str; 4] = ["<bos>", "<eos>", "<pad>", "<unk>"];

/// Word ↔ index map. Indices 0..4 are reserved for `<bos>`, `<eos>`,
/// `<pad>` and `<unk>`; stored words occupy 4..|V|.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds from the non-special words in index order.
    pub fn from_words(words: Vec<String>) -> Self {
        let mut all: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        all.extend(words);
        let index = all
            .iter()
            .enumerate()
            .skip(SPECIALS.len())
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Self { words: all, index }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Stored (non-special) words in index order.
    pub fn words(&self) -> &[String] {
        &self.words[SPECIALS.len()..]
    }

    pub fn word(&self, index: usize) -> Option<&str> {
        self.words.get(index).map(String::as_str)
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn is_special(index: usize) -> bool {
        index < SPECIALS.len()
    }

    pub fn tokenize<S: AsRef<str>>(&self, words: &[S]) -> Vec<usize> {
        words
            .iter()
            .map(|w| self.index_of(w.as_ref()).unwrap_or(UNK))
            .collect()
    }

    pub fn detokenize(&self, tokens: &[usize]) -> Result<Vec<String>> {
        tokens
            .iter()
            .map(|&t| {
                self.word(t).map(str::to_string).ok_or(Error::Range {
                    what: "vocabulary",
                    index: t as i64,
                    size: self.len(),
                })
            })
            .collect()
    }

    /// Hex SHA-256 over the full index-ordered word list.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for w in &self.words {
            h.update(w.as_bytes());
            h.update([0u8]);
        }
        hex::encode(h.finalize())
    }
}

/// Keeps words with frequency ≥ `min_count`, ordered by frequency
/// descending then lexicographically.
pub fn build_vocabulary(records: &[InteractionRecord], min_count: usize) -> Vocabulary {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for r in records {
        for w in &r.explanation {
            *counts.entry(w.as_str()).or_default() += 1;
        }
    }
    let mut kept: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(w, n)| n >= min_count && !SPECIALS.contains(&w))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Vocabulary::from_words(kept.into_iter().map(|(w, _)| w.to_string()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(text: &str) -> InteractionRecord {
        let first = text.split_whitespace().next().unwrap();
        InteractionRecord::new("u", "i", 3.0, text, &[first]).unwrap()
    }

    #[test]
    fn threshold_filters_rare_words() {
        let records = vec![rec("a a b"), rec("a")];
        let v = build_vocabulary(&records, 2);
        assert_eq!(v.words(), ["a"]);
        assert_eq!(v.len(), 5);
        let v = build_vocabulary(&records, 0);
        assert_eq!(v.words(), ["a", "b"]);
    }

    #[test]
    fn specials_have_fixed_indices() {
        let v = build_vocabulary(&[rec("x y")], 1);
        assert_eq!(v.word(BOS), Some("<bos>"));
        assert_eq!(v.word(EOS), Some("<eos>"));
        assert_eq!(v.word(PAD), Some("<pad>"));
        assert_eq!(v.word(UNK), Some("<unk>"));
        assert_eq!(v.index_of("x"), Some(4));
        assert_eq!(v.index_of("<bos>"), None);
    }

    #[test]
    fn deterministic_ordering() {
        let records = vec![rec("c b a b c c"), rec("d a")];
        let v1 = build_vocabulary(&records, 1);
        let v2 = build_vocabulary(&records.clone(), 1);
        assert_eq!(v1, v2);
        assert_eq!(v1.words(), ["c", "a", "b", "d"]);
        assert_eq!(v1.content_hash(), v2.content_hash());
    }

    #[test]
    fn tokenize_edge_cases() {
        let v = build_vocabulary(&[rec("the gym was great")], 1);
        let empty: Vec<String> = vec![];
        assert!(v.tokenize(&empty).is_empty());
        assert!(v.detokenize(&[]).unwrap().is_empty());
        let t = v.tokenize(&["the", "pool", "was"]);
        assert_eq!(t[1], UNK);
        assert_eq!(v.detokenize(&t).unwrap(), ["the", "<unk>", "was"]);
        assert!(matches!(v.detokenize(&[v.len()]), Err(Error::Range { .. })));
    }

    proptest! {
        #[test]
        fn round_trip_on_in_vocab_sentences(idx in proptest::collection::vec(0usize..6, 0..30)) {
            let v = build_vocabulary(&[rec("alpha beta gamma delta eps zeta")], 1);
            let sentence: Vec<String> = idx.iter().map(|&i| v.words()[i].clone()).collect();
            prop_assert_eq!(v.detokenize(&v.tokenize(&sentence)).unwrap(), sentence);
        }
    }
}
