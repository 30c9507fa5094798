use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Symbol;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EditError {
    #[error("character-indexed program has an unmatched pos marker")]
    DanglingPos,
    #[error("pos{index} does not advance past pos{previous}")]
    NonMonotone { previous: usize, index: usize },
    #[error("pos{index} exceeds bound {bound}")]
    OutOfRange { index: usize, bound: usize },
    #[error("character symbol {0:?} inside an edit program")]
    StrayChar(char),
    #[error("word {0:?} outside any edit")]
    WordOutsideEdit(String),
    #[error("program kind does not match the source")]
    KindMismatch,
}

/// Replace characters `start..end` of the detokenized text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharEdit {
    pub start: usize,
    pub end: usize,
    pub replacement: Vec<String>,
}

/// Replace the token that follows marker `boundary` (`0` is the first token).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokEdit {
    pub boundary: usize,
    pub replacement: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum EditProgram {
    Char(Vec<CharEdit>),
    Token(Vec<TokEdit>),
}

/// Largest admissible `pos` index: character positions run `0..=len`,
/// token boundaries run `0..count`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PosBound {
    Chars(usize),
    Tokens(usize),
}

/// What an edit program is applied to.
#[derive(Debug, Clone, Copy)]
pub enum Edits<'a> {
    Text(&'a str),
    Tokens(&'a [&'a str]),
}

impl EditProgram {
    pub fn is_empty(&self) -> bool {
        match self {
            EditProgram::Char(e) => e.is_empty(),
            EditProgram::Token(e) => e.is_empty(),
        }
    }

    pub fn to_symbols(&self) -> Vec<Symbol> {
        let mut out = Vec::new();
        match self {
            EditProgram::Char(edits) => {
                for edit in edits {
                    out.push(Symbol::Pos(edit.start));
                    out.extend(edit.replacement.iter().cloned().map(Symbol::Word));
                    out.push(Symbol::Pos(edit.end));
                }
            }
            EditProgram::Token(edits) => {
                for edit in edits {
                    out.push(Symbol::Pos(edit.boundary));
                    out.extend(edit.replacement.iter().cloned().map(Symbol::Word));
                }
            }
        }
        out
    }
}

/// Validates arbitrary model output against the `(Pos Word* Pos)*` grammar
/// (characters) or `(Pos Word*)*` (tokens).
pub fn parse_edit_program(symbols: &[Symbol], bound: PosBound) -> Result<EditProgram, EditError> {
    match bound {
        PosBound::Chars(len) => parse_char_program(symbols, len).map(EditProgram::Char),
        PosBound::Tokens(count) => parse_token_program(symbols, count).map(EditProgram::Token),
    }
}

fn parse_char_program(symbols: &[Symbol], len: usize) -> Result<Vec<CharEdit>, EditError> {
    let pos_count = symbols.iter().filter(|s| matches!(s, Symbol::Pos(_))).count();
    if pos_count % 2 == 1 {
        return Err(EditError::DanglingPos);
    }
    let mut edits = Vec::new();
    let mut open: Option<(usize, Vec<String>)> = None;
    let mut last_end: Option<usize> = None;
    for sym in symbols {
        match sym {
            Symbol::Char(c) => return Err(EditError::StrayChar(*c)),
            Symbol::Word(w) => match open.as_mut() {
                Some((_, words)) => words.push(w.clone()),
                None => return Err(EditError::WordOutsideEdit(w.clone())),
            },
            Symbol::Pos(index) => {
                let index = *index;
                if index > len {
                    return Err(EditError::OutOfRange { index, bound: len });
                }
                match open.take() {
                    None => {
                        if let Some(previous) = last_end {
                            if index < previous {
                                return Err(EditError::NonMonotone { previous, index });
                            }
                        }
                        open = Some((index, Vec::new()));
                    }
                    Some((start, replacement)) => {
                        if index <= start {
                            return Err(EditError::NonMonotone { previous: start, index });
                        }
                        edits.push(CharEdit { start, end: index, replacement });
                        last_end = Some(index);
                    }
                }
            }
        }
    }
    debug_assert!(open.is_none());
    Ok(edits)
}

fn parse_token_program(symbols: &[Symbol], count: usize) -> Result<Vec<TokEdit>, EditError> {
    let mut edits: Vec<TokEdit> = Vec::new();
    for sym in symbols {
        match sym {
            Symbol::Char(c) => return Err(EditError::StrayChar(*c)),
            Symbol::Word(w) => match edits.last_mut() {
                Some(edit) => edit.replacement.push(w.clone()),
                None => return Err(EditError::WordOutsideEdit(w.clone())),
            },
            Symbol::Pos(index) => {
                let index = *index;
                if index >= count {
                    return Err(EditError::OutOfRange { index, bound: count });
                }
                if let Some(previous) = edits.last().map(|e| e.boundary) {
                    if index <= previous {
                        return Err(EditError::NonMonotone { previous, index });
                    }
                }
                edits.push(TokEdit { boundary: index, replacement: Vec::new() });
            }
        }
    }
    Ok(edits)
}

/// Copies unedited regions and substitutes edited ones. Untokenized copies
/// split on spaces; a span boundary inside a word leaves the fragments as
/// words of their own.
pub fn apply_edits(source: &Edits<'_>, program: &EditProgram) -> Result<Vec<String>, EditError> {
    match (source, program) {
        (Edits::Text(text), EditProgram::Char(edits)) => {
            let chars: Vec<char> = text.chars().collect();
            let mut out = Vec::new();
            let mut cursor = 0;
            let copy = |from: usize, to: usize, out: &mut Vec<String>| {
                let piece: String = chars[from..to].iter().collect();
                out.extend(piece.split(' ').filter(|w| !w.is_empty()).map(str::to_string));
            };
            for edit in edits {
                if edit.end > chars.len() {
                    return Err(EditError::OutOfRange { index: edit.end, bound: chars.len() });
                }
                if edit.start < cursor || edit.start >= edit.end {
                    return Err(EditError::NonMonotone { previous: cursor, index: edit.start });
                }
                copy(cursor, edit.start, &mut out);
                out.extend(edit.replacement.iter().cloned());
                cursor = edit.end;
            }
            copy(cursor, chars.len(), &mut out);
            Ok(out)
        }
        (Edits::Tokens(tokens), EditProgram::Token(edits)) => {
            let mut out = Vec::new();
            let mut pending = edits.iter().peekable();
            for (k, token) in tokens.iter().enumerate() {
                match pending.peek() {
                    Some(edit) if edit.boundary == k => {
                        out.extend(edit.replacement.iter().cloned());
                        pending.next();
                    }
                    _ => out.push(token.to_string()),
                }
            }
            if let Some(edit) = pending.next() {
                return Err(EditError::OutOfRange { index: edit.boundary, bound: tokens.len() });
            }
            Ok(out)
        }
        _ => Err(EditError::KindMismatch),
    }
}
