//! Space-separated text form of symbol sequences.
//!
//! `Char` renders as itself (a space as `␣`), `Pos(k)` as `pos{k}` and a
//! `Word` as the word. Words that would read back as something else (one
//! scalar long, `pos` followed by digits, or starting with `\`) are written
//! as `\=word`. The characters `␣` and `\` are written `\␣` and `\\`.

use thiserror::Error;

use super::Symbol;

const SPACE_GLYPH: char = '␣';
const ESCAPE: char = '\\';
const WORD_ESCAPE: &str = "\\=";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RenderError {
    #[error("empty symbol in rendered sequence")]
    EmptySymbol,
    #[error("unknown escape {0:?}")]
    BadEscape(String),
}

fn looks_like_pos(text: &str) -> Option<usize> {
    let digits = text.strip_prefix("pos")?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

pub fn render_symbol(sym: &Symbol) -> String {
    match sym {
        Symbol::Char(' ') => SPACE_GLYPH.to_string(),
        Symbol::Char(c) if *c == SPACE_GLYPH || *c == ESCAPE => format!("{ESCAPE}{c}"),
        Symbol::Char(c) => c.to_string(),
        Symbol::Pos(k) => format!("pos{k}"),
        Symbol::Word(w) => {
            let needs_escape =
                w.chars().count() <= 1 || looks_like_pos(w).is_some() || w.starts_with(ESCAPE);
            if needs_escape {
                format!("{WORD_ESCAPE}{w}")
            } else {
                w.clone()
            }
        }
    }
}

pub fn render_symbols(symbols: &[Symbol]) -> String {
    symbols.iter().map(render_symbol).collect::<Vec<_>>().join(" ")
}

pub fn parse_symbol(text: &str) -> Result<Symbol, RenderError> {
    if let Some(word) = text.strip_prefix(WORD_ESCAPE) {
        return Ok(Symbol::Word(word.to_string()));
    }
    let mut chars = text.chars();
    match (chars.next(), chars.next(), chars.next()) {
        (None, _, _) => Err(RenderError::EmptySymbol),
        (Some(SPACE_GLYPH), None, _) => Ok(Symbol::Char(' ')),
        (Some(c), None, _) => Ok(Symbol::Char(c)),
        (Some(ESCAPE), Some(c), None) if c == SPACE_GLYPH || c == ESCAPE => Ok(Symbol::Char(c)),
        (Some(ESCAPE), _, _) => Err(RenderError::BadEscape(text.to_string())),
        _ => Ok(looks_like_pos(text).map(Symbol::Pos).unwrap_or_else(|| Symbol::Word(text.to_string()))),
    }
}

/// Inverse of [`render_symbols`]; the empty string is the empty sequence.
pub fn parse_symbols(text: &str) -> Result<Vec<Symbol>, RenderError> {
    if text.is_empty() {
        return Ok(Vec::new());
    }
    text.split(' ').map(parse_symbol).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn escapes_ambiguous_words() {
        let seq = vec![
            Symbol::Word("a".into()),
            Symbol::Char('a'),
            Symbol::Word("pos3".into()),
            Symbol::Pos(3),
            Symbol::Char(' '),
            Symbol::Char('␣'),
            Symbol::Char('\\'),
            Symbol::Word("\\x".into()),
            Symbol::Word("␣".into()),
        ];
        let text = render_symbols(&seq);
        assert_eq!(text, "\\=a a \\=pos3 pos3 ␣ \\␣ \\\\ \\=\\x \\=␣");
        assert_eq!(parse_symbols(&text).unwrap(), seq);
    }

    #[test]
    fn rejects_unknown_escape() {
        assert!(matches!(parse_symbols("\\q"), Err(RenderError::BadEscape(_))));
        assert!(matches!(parse_symbols("a  b"), Err(RenderError::EmptySymbol)));
    }

    fn arb_symbol() -> impl Strategy<Value = Symbol> {
        prop_oneof![
            any::<char>().prop_filter("no whitespace except space", |c| *c == ' ' || !c.is_whitespace()).prop_map(Symbol::Char),
            "[^\\s]{1,6}".prop_map(Symbol::Word),
            (0usize..500).prop_map(Symbol::Pos),
        ]
    }

    proptest! {
        #[test]
        fn render_parse_roundtrip(seq in proptest::collection::vec(arb_symbol(), 0..12)) {
            prop_assert_eq!(parse_symbols(&render_symbols(&seq)).unwrap(), seq);
        }
    }
}
