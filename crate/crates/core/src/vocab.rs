//! Closed vocabularies with reserved leading ids.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

/// Character ids for the context encoder.
pub const CHAR_PAD: usize = 0;
pub const CHAR_UNK: usize = 1;
pub const CHAR_MASK: usize = 2;
/// Stands in for the space between tokens.
pub const CHAR_BOUNDARY: usize = 3;
pub const CHAR_RESERVED: usize = 4;

/// Output ids shared by every decoder vocabulary.
pub const BOS: usize = 0;
pub const EOS: usize = 1;
pub const UNK: usize = 2;
pub const OUTPUT_RESERVED: usize = 3;

/// Items mapped to ids `reserved..`, in sorted order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabRepr<T>", into = "VocabRepr<T>")]
#[serde(bound(serialize = "T: Serialize + Ord + Clone", deserialize = "T: Deserialize<'de> + Ord + Clone"))]
pub struct Vocab<T: Ord + Clone> {
    reserved: usize,
    items: Vec<T>,
    index: BTreeMap<T, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr<T> {
    reserved: usize,
    items: Vec<T>,
}

impl<T: Ord + Clone> From<VocabRepr<T>> for Vocab<T> {
    fn from(r: VocabRepr<T>) -> Self {
        Vocab::new(r.reserved, r.items)
    }
}

impl<T: Ord + Clone> From<Vocab<T>> for VocabRepr<T> {
    fn from(v: Vocab<T>) -> Self {
        VocabRepr { reserved: v.reserved, items: v.items }
    }
}

impl<T: Ord + Clone> Vocab<T> {
    pub fn new(reserved: usize, items: impl IntoIterator<Item = T>) -> Self {
        let set: BTreeSet<T> = items.into_iter().collect();
        let items: Vec<T> = set.into_iter().collect();
        let index = items.iter().enumerate().map(|(i, t)| (t.clone(), i + reserved)).collect();
        Vocab { reserved, items, index }
    }

    /// Total size including reserved ids.
    pub fn len(&self) -> usize {
        self.reserved + self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn reserved(&self) -> usize {
        self.reserved
    }

    pub fn id(&self, item: &T) -> Option<usize> {
        self.index.get(item).copied()
    }

    pub fn id_or(&self, item: &T, fallback: usize) -> usize {
        self.id(item).unwrap_or(fallback)
    }

    pub fn item(&self, id: usize) -> Option<&T> {
        id.checked_sub(self.reserved).and_then(|i| self.items.get(i))
    }

    pub fn items(&self) -> &[T] {
        &self.items
    }
}

pub type CharVocab = Vocab<char>;
pub type WordVocab = Vocab<String>;

/// Context-encoder ids for a detokenized sentence; spaces become [`CHAR_BOUNDARY`].
pub fn char_ids(vocab: &CharVocab, text: &str) -> Vec<usize> {
    text.chars().map(|c| if c == ' ' { CHAR_BOUNDARY } else { vocab.id_or(&c, CHAR_UNK) }).collect()
}

pub fn char_vocab_from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> CharVocab {
    Vocab::new(CHAR_RESERVED, texts.into_iter().flat_map(str::chars).filter(|&c| c != ' '))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_follow_reserved_block_in_sorted_order() {
        let v = char_vocab_from_texts(["ba c", "a"]);
        assert_eq!(v.len(), 7);
        assert_eq!(v.id(&'a'), Some(4));
        assert_eq!(v.item(6), Some(&'c'));
        assert_eq!(v.item(2), None);
        assert_eq!(char_ids(&v, "ab z"), vec![4, 5, CHAR_BOUNDARY, CHAR_UNK]);
    }

    #[test]
    fn serde_rebuilds_the_index() {
        let v: WordVocab = Vocab::new(OUTPUT_RESERVED, ["two".to_string(), "one".to_string()]);
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(json, r#"{"reserved":3,"items":["one","two"]}"#);
        let back: WordVocab = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.id(&"two".to_string()), Some(4));
    }
}
