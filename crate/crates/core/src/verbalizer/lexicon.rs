//! Written-form to spoken-form coverage lexicon.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, BufRead, Write};

use super::beam::Trie;
use crate::corpus::{Sentence, SpokenForm};
use crate::vocab::WordVocab;

#[derive(Debug, thiserror::Error)]
pub enum LexiconError {
    #[error("line {line}: expected `written<TAB>spoken words`")]
    MalformedLine { line: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Every attested spoken word sequence per written form.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CoverageLexicon {
    entries: BTreeMap<String, BTreeSet<Vec<String>>>,
}

impl CoverageLexicon {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, written: &str, spoken: Vec<String>) {
        self.entries.entry(written.to_string()).or_default().insert(spoken);
    }

    pub fn covers(&self, written: &str) -> bool {
        self.entries.contains_key(written)
    }

    pub fn permitted(&self, written: &str) -> Option<&BTreeSet<Vec<String>>> {
        self.entries.get(written)
    }

    pub fn contains(&self, written: &str, spoken: &[String]) -> bool {
        self.entries.get(written).is_some_and(|set| set.contains(spoken))
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(BTreeSet::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Id trie of the permitted forms; forms with out-of-vocabulary words are skipped.
    pub fn trie(&self, written: &str, vocab: &WordVocab) -> Option<Trie> {
        let set = self.entries.get(written)?;
        let mut trie = Trie::new();
        for words in set {
            if let Some(ids) = words.iter().map(|w| vocab.id(w)).collect::<Option<Vec<_>>>() {
                trie.insert(&ids);
            }
        }
        (!trie.is_empty()).then_some(trie)
    }

    pub fn write<W: Write>(&self, mut out: W) -> io::Result<()> {
        for (written, set) in &self.entries {
            for words in set {
                writeln!(out, "{written}\t{}", words.join(" "))?;
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("lexicon entries are UTF-8")
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self, LexiconError> {
        let mut lex = CoverageLexicon::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let (written, spoken) = line.split_once('\t').ok_or(LexiconError::MalformedLine { line: i + 1 })?;
            let words: Vec<String> = spoken.split(' ').filter(|w| !w.is_empty()).map(String::from).collect();
            if written.is_empty() || words.is_empty() {
                return Err(LexiconError::MalformedLine { line: i + 1 });
            }
            lex.insert(written, words);
        }
        Ok(lex)
    }
}

/// The observed multimap over non-trivial tokens.
pub fn build_lexicon(sentences: &[Sentence]) -> CoverageLexicon {
    let mut lex = CoverageLexicon::new();
    for t in sentences.iter().flat_map(|s| &s.tokens) {
        if let SpokenForm::Words(words) = &t.spoken {
            lex.insert(&t.written, words.clone());
        }
    }
    lex
}
