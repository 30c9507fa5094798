//! Single-pass source/target representations.
//!
//! Four target formats are supported: the full verbalization over an
//! untokenized or tokenized source, and the corresponding edit programs
//! that address spans with `pos*` markers (character offsets when the
//! source is untokenized, token boundaries when it is tokenized).

mod edits;
mod render;

pub use edits::{
    apply_edits, parse_edit_program, CharEdit, EditError, EditProgram, Edits, PosBound, TokEdit,
};
pub use render::{parse_symbols, render_symbols, RenderError};

use serde::{Deserialize, Serialize};

use crate::corpus::{Sentence, SpokenForm};

/// Marker word for out-of-vocabulary output; never produced by encoding.
pub const UNK_WORD: &str = "<unk>";

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Symbol {
    Char(char),
    Word(String),
    Pos(usize),
}

impl Symbol {
    pub fn word(w: impl Into<String>) -> Self {
        Symbol::Word(w.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Representation {
    UntokFull,
    UntokEdits,
    TokFull,
    TokEdits,
}

impl Representation {
    pub const ALL: [Representation; 4] = [
        Representation::UntokFull,
        Representation::UntokEdits,
        Representation::TokFull,
        Representation::TokEdits,
    ];

    pub fn is_tokenized(self) -> bool {
        matches!(self, Representation::TokFull | Representation::TokEdits)
    }

    pub fn is_edits(self) -> bool {
        matches!(self, Representation::UntokEdits | Representation::TokEdits)
    }

    pub fn name(self) -> &'static str {
        match self {
            Representation::UntokFull => "untok-full",
            Representation::UntokEdits => "untok-edits",
            Representation::TokFull => "tok-full",
            Representation::TokEdits => "tok-edits",
        }
    }
}

impl std::str::FromStr for Representation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Representation::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| format!("unknown representation {s:?}"))
    }
}

pub fn encode_source_untokenized(s: &Sentence) -> Vec<Symbol> {
    s.detokenize().0.chars().map(Symbol::Char).collect()
}

/// Token characters with the k-th inter-token space replaced by `Pos(k)`.
pub fn encode_source_tokenized(s: &Sentence) -> Vec<Symbol> {
    tokenized_source_from_words(&s.written_tokens())
}

pub fn tokenized_source_from_words(tokens: &[&str]) -> Vec<Symbol> {
    let mut out = Vec::new();
    for (i, token) in tokens.iter().enumerate() {
        if i > 0 {
            out.push(Symbol::Pos(i));
        }
        out.extend(token.chars().map(Symbol::Char));
    }
    out
}

pub fn encode_source(s: &Sentence, repr: Representation) -> Vec<Symbol> {
    if repr.is_tokenized() {
        encode_source_tokenized(s)
    } else {
        encode_source_untokenized(s)
    }
}

fn replacement_words(spoken: &SpokenForm) -> Vec<Symbol> {
    match spoken {
        SpokenForm::Words(words) => words.iter().cloned().map(Symbol::Word).collect(),
        SpokenForm::Silent | SpokenForm::SelfCopy => Vec::new(),
    }
}

pub fn encode_target(s: &Sentence, repr: Representation) -> Vec<Symbol> {
    match repr {
        Representation::UntokFull => encode_untok_full(s),
        Representation::TokFull => encode_tok_full(s),
        Representation::UntokEdits => program_from_sentence(s, repr).to_symbols(),
        Representation::TokEdits => program_from_sentence(s, repr).to_symbols(),
    }
}

fn token_piece(token: &crate::corpus::Token) -> Vec<Symbol> {
    match &token.spoken {
        SpokenForm::SelfCopy => token.written.chars().map(Symbol::Char).collect(),
        other => replacement_words(other),
    }
}

fn encode_untok_full(s: &Sentence) -> Vec<Symbol> {
    let mut out = Vec::new();
    let mut first = true;
    for token in s.tokens.iter().filter(|t| t.spoken != SpokenForm::Silent) {
        if !first {
            out.push(Symbol::Char(' '));
        }
        first = false;
        out.extend(token_piece(token));
    }
    out
}

/// A silent token at index k drops marker k, or marker 1 when it opens the
/// sentence; surviving markers keep their source numbering.
fn encode_tok_full(s: &Sentence) -> Vec<Symbol> {
    let n = s.tokens.len();
    let mut dropped = vec![false; n];
    for (k, token) in s.tokens.iter().enumerate() {
        if token.spoken == SpokenForm::Silent {
            let marker = if k > 0 { k } else { 1 };
            if marker < n {
                dropped[marker] = true;
            }
        }
    }
    let mut out = Vec::new();
    for (k, token) in s.tokens.iter().enumerate() {
        if k > 0 && !dropped[k] {
            out.push(Symbol::Pos(k));
        }
        if token.spoken != SpokenForm::Silent {
            out.extend(token_piece(token));
        }
    }
    out
}

/// Builds the minimal edit program for a sentence. Untokenized programs merge
/// runs of adjacent changed tokens into one span.
pub fn program_from_sentence(s: &Sentence, repr: Representation) -> EditProgram {
    if repr.is_tokenized() {
        let edits = s
            .tokens
            .iter()
            .enumerate()
            .filter(|(_, t)| t.spoken.is_changed())
            .map(|(k, t)| TokEdit { boundary: k, replacement: t.spoken_words() })
            .collect();
        EditProgram::Token(edits)
    } else {
        let (_, spans) = s.detokenize();
        let mut edits: Vec<CharEdit> = Vec::new();
        let mut run_open = false;
        for (token, span) in s.tokens.iter().zip(&spans) {
            if !token.spoken.is_changed() {
                run_open = false;
                continue;
            }
            match edits.last_mut() {
                Some(edit) if run_open => {
                    edit.end = span.end;
                    edit.replacement.extend(token.spoken_words());
                }
                _ => edits.push(CharEdit {
                    start: span.start,
                    end: span.end,
                    replacement: token.spoken_words(),
                }),
            }
            run_open = true;
        }
        EditProgram::Char(edits)
    }
}

/// Words of a full-format target: runs of `Char` form words, every `Word`
/// is one word, and spaces or `Pos` markers separate.
pub fn extract_words(symbols: &[Symbol]) -> Vec<String> {
    let mut words = Vec::new();
    let mut buf = String::new();
    let flush = |buf: &mut String, words: &mut Vec<String>| {
        if !buf.is_empty() {
            words.push(std::mem::take(buf));
        }
    };
    for sym in symbols {
        match sym {
            Symbol::Char(' ') | Symbol::Pos(_) => flush(&mut buf, &mut words),
            Symbol::Char(c) => buf.push(*c),
            Symbol::Word(w) => {
                flush(&mut buf, &mut words);
                words.push(w.clone());
            }
        }
    }
    flush(&mut buf, &mut words);
    words
}

/// Bound on `Pos` indices for a program over this sentence.
pub fn pos_bound(s: &Sentence, repr: Representation) -> PosBound {
    if repr.is_tokenized() {
        PosBound::Tokens(s.tokens.len())
    } else {
        PosBound::Chars(s.detokenize().0.chars().count())
    }
}

/// Turns model output symbols into words for the given representation.
pub fn decode_output(
    s: &Sentence,
    repr: Representation,
    output: &[Symbol],
) -> Result<Vec<String>, EditError> {
    if !repr.is_edits() {
        return Ok(extract_words(output));
    }
    let program = parse_edit_program(output, pos_bound(s, repr))?;
    if repr.is_tokenized() {
        apply_edits(&Edits::Tokens(&s.written_tokens()), &program)
    } else {
        apply_edits(&Edits::Text(&s.detokenize().0), &program)
    }
}

pub fn roundtrip_check(s: &Sentence, repr: Representation) -> bool {
    let target = encode_target(s, repr);
    match decode_output(s, repr, &target) {
        Ok(words) => words == s.reference_verbalization(),
        Err(_) => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tests::table1_sentence;
    use crate::corpus::{SemioticClass, Token};
    use proptest::prelude::*;

    fn syms(text: &str) -> Vec<Symbol> {
        parse_symbols(text).unwrap()
    }

    fn plain(words: &[&str]) -> Sentence {
        Sentence::new(
            "p",
            words
                .iter()
                .map(|w| Token::new(SemioticClass::Plain, *w, SpokenForm::SelfCopy))
                .collect(),
        )
    }

    #[test]
    fn table1_and_table2_rows() {
        let s = table1_sentence();
        assert_eq!(render_symbols(&encode_source_untokenized(&s)), "I ␣ l i v e ␣ a t ␣ 1 2 3 ␣ K i n g ␣ A v e");
        assert_eq!(
            render_symbols(&encode_target(&s, Representation::UntokFull)),
            "I ␣ l i v e ␣ a t ␣ one twenty three ␣ K i n g ␣ Avenue"
        );
        assert_eq!(
            render_symbols(&encode_target(&s, Representation::UntokEdits)),
            "pos10 one twenty three pos13 pos19 Avenue pos22"
        );
        assert_eq!(
            render_symbols(&encode_source_tokenized(&s)),
            "I pos1 l i v e pos2 a t pos3 1 2 3 pos4 K i n g pos5 A v e"
        );
        assert_eq!(
            render_symbols(&encode_target(&s, Representation::TokFull)),
            "I pos1 l i v e pos2 a t pos3 one twenty three pos4 K i n g pos5 Avenue"
        );
        assert_eq!(
            render_symbols(&encode_target(&s, Representation::TokEdits)),
            "pos3 one twenty three pos5 Avenue"
        );
    }

    #[test]
    fn small_sources() {
        assert_eq!(encode_source_untokenized(&plain(&["X"])), vec![Symbol::Char('X')]);
        assert_eq!(encode_source_untokenized(&plain(&["ab", "cd"])).len(), 5);
        assert_eq!(encode_source_tokenized(&plain(&["Hi"])), vec![Symbol::Char('H'), Symbol::Char('i')]);
        assert_eq!(encode_source_tokenized(&plain(&["ab", "cd"])), syms("a b pos1 c d"));
    }

    #[test]
    fn unchanged_sentence_has_empty_edit_programs() {
        let s = plain(&["the", "cat"]);
        assert!(encode_target(&s, Representation::UntokEdits).is_empty());
        assert!(encode_target(&s, Representation::TokEdits).is_empty());
        for repr in Representation::ALL {
            assert!(roundtrip_check(&s, repr));
        }
    }

    #[test]
    fn table1_roundtrips_in_every_representation() {
        for repr in Representation::ALL {
            assert!(roundtrip_check(&table1_sentence(), repr), "{repr:?}");
        }
    }

    #[test]
    fn silent_tokens() {
        let s = Sentence::new(
            "sil",
            vec![
                Token::new(SemioticClass::Punct, ",", SpokenForm::Silent),
                Token::new(SemioticClass::Plain, "a", SpokenForm::SelfCopy),
                Token::new(SemioticClass::Punct, ".", SpokenForm::Silent),
                Token::new(SemioticClass::Plain, "b", SpokenForm::SelfCopy),
                Token::new(SemioticClass::Punct, "!", SpokenForm::Silent),
            ],
        );
        assert_eq!(render_symbols(&encode_target(&s, Representation::UntokFull)), "a ␣ b");
        assert_eq!(render_symbols(&encode_target(&s, Representation::TokFull)), "a pos3 b");
        assert_eq!(render_symbols(&encode_target(&s, Representation::TokEdits)), "pos0 pos2 pos4");
        assert_eq!(render_symbols(&encode_target(&s, Representation::UntokEdits)), "pos0 pos1 pos4 pos5 pos8 pos9");
        for repr in Representation::ALL {
            assert!(roundtrip_check(&s, repr), "{repr:?}");
        }
    }

    #[test]
    fn adjacent_changed_tokens_merge_in_char_edits() {
        let w = |s: &str| SpokenForm::Words(s.split(' ').map(String::from).collect());
        let s = Sentence::new(
            "m",
            vec![
                Token::new(SemioticClass::Plain, "on", SpokenForm::SelfCopy),
                Token::new(SemioticClass::Cardinal, "12", w("twelve")),
                Token::new(SemioticClass::Measure, "ft", w("feet")),
            ],
        );
        assert_eq!(render_symbols(&encode_target(&s, Representation::UntokEdits)), "pos3 twelve feet pos8");
        assert_eq!(render_symbols(&encode_target(&s, Representation::TokEdits)), "pos1 twelve pos2 feet");
    }

    #[test]
    fn decode_rejects_bad_programs() {
        let s = table1_sentence();
        assert!(matches!(
            decode_output(&s, Representation::UntokEdits, &syms("pos13 \\=x pos10")),
            Err(EditError::NonMonotone { .. })
        ));
        assert_eq!(
            decode_output(&s, Representation::UntokFull, &syms("I ␣ s a w")).unwrap(),
            ["I", "saw"]
        );
    }

    fn arb_sentence() -> impl Strategy<Value = Sentence> {
        let token = (
            "[a-zA-Z0-9.]{1,5}",
            prop_oneof![
                Just(SpokenForm::SelfCopy),
                Just(SpokenForm::Silent),
                proptest::collection::vec("[a-z]{1,4}|pos[0-9]", 1..4).prop_map(SpokenForm::Words),
            ],
        )
            .prop_map(|(written, spoken)| Token::new(SemioticClass::Plain, written, spoken));
        proptest::collection::vec(token, 1..9).prop_map(|tokens| Sentence::new("p", tokens))
    }

    proptest! {
        #[test]
        fn every_representation_roundtrips(s in arb_sentence()) {
            for repr in Representation::ALL {
                prop_assert!(roundtrip_check(&s, repr), "{:?}", repr);
            }
        }

        #[test]
        fn encoded_edits_never_cover_unchanged_tokens(s in arb_sentence()) {
            let (_, spans) = s.detokenize();
            if let EditProgram::Char(edits) = program_from_sentence(&s, Representation::UntokEdits) {
                for edit in &edits {
                    // Edits start and end on token boundaries.
                    prop_assert!(spans.iter().any(|sp| sp.start == edit.start));
                    prop_assert!(spans.iter().any(|sp| sp.end == edit.end));
                    for (span, token) in spans.iter().zip(&s.tokens) {
                        if span.start >= edit.start && span.end <= edit.end {
                            prop_assert!(token.spoken.is_changed());
                        }
                    }
                }
            }
            if let EditProgram::Token(edits) = program_from_sentence(&s, Representation::TokEdits) {
                for edit in &edits {
                    prop_assert!(s.tokens[edit.boundary].spoken.is_changed());
                }
            }
        }

        #[test]
        fn rendered_targets_reparse(s in arb_sentence()) {
            for repr in Representation::ALL {
                let target = encode_target(&s, repr);
                prop_assert_eq!(parse_symbols(&render_symbols(&target)).unwrap(), target);
            }
        }
    }
}
