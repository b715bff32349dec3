use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::tokenize::{tokenize, Token};

pub const UNK: &str = "<unk>";

/// Word ↔ index map; index 0 is reserved for unknown words.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(words: Vec<String>) -> Self {
        Self::from_words(words)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.words
    }
}

impl Vocabulary {
    /// Words seen at least `min_count` times across the corpus, indexed 1.. in
    /// lexicographic order.
    pub fn build<'a>(captions: impl IntoIterator<Item = &'a str>, min_count: usize) -> Self {
        let min_count = min_count.max(1);
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for caption in captions {
            for t in tokenize(caption) {
                *counts.entry(t.surface).or_default() += 1;
            }
        }
        let words = counts.into_iter().filter(|&(_, c)| c >= min_count).map(|(w, _)| w).collect();
        Self::from_words(words)
    }

    /// Rebuilds a vocabulary from its known words in index order (excluding `<unk>`).
    pub fn from_words(words: Vec<String>) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i + 1)).collect();
        Self { words, index }
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Known words plus `<unk>`.
    pub fn size(&self) -> usize {
        self.words.len() + 1
    }

    pub fn known_words(&self) -> usize {
        self.words.len()
    }

    pub fn index_of(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(0)
    }

    pub fn word(&self, index: usize) -> &str {
        if index == 0 {
            UNK
        } else {
            &self.words[index - 1]
        }
    }

    pub fn numericalize(&self, tokens: &[Token]) -> Vec<usize> {
        tokens.iter().map(|t| self.index_of(&t.surface)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn min_count_threshold() {
        let v = Vocabulary::build(["a a b"], 2);
        assert_eq!(v.words(), ["a"]);
        assert_eq!(v.numericalize(&tokenize("a b")), vec![v.index_of("a"), 0]);
        assert_eq!(v.index_of("a"), 1);
    }

    #[test]
    fn empty_corpus() {
        let v = Vocabulary::build(std::iter::empty(), 1);
        assert_eq!(v.known_words(), 0);
        assert_eq!(v.numericalize(&tokenize("x y")), vec![0, 0]);
    }

    #[test]
    fn threshold_one_keeps_everything() {
        let v = Vocabulary::build(["x y"], 1);
        assert_eq!(v.known_words(), 2);
        assert_ne!(v.index_of("x"), 0);
        assert_ne!(v.index_of("y"), 0);
    }

    #[test]
    fn ordering_is_independent_of_corpus_order() {
        let a = Vocabulary::build(["b c", "a"], 1);
        let b = Vocabulary::build(["a", "c b"], 1);
        assert_eq!(a, b);
        assert_eq!(Vocabulary::from_words(a.words().to_vec()).index_of("c"), 3);
    }

    #[test]
    fn serde_roundtrip_rebuilds_index() {
        let v = Vocabulary::build(["red shirt"], 1);
        let back: Vocabulary = serde_json::from_str(&serde_json::to_string(&v).unwrap()).unwrap();
        assert_eq!(back.index_of("shirt"), v.index_of("shirt"));
    }
}
