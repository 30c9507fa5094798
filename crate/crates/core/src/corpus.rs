//! Aligned written/spoken corpus in the three-column release format.
//!
//! Each line is `class<TAB>written<TAB>spoken`; a sentence ends at a
//! `<eos><TAB><eos>` line. Spoken forms are `<self>` (copy the written
//! token), `sil` (say nothing) or a space separated word sequence.

use std::fmt;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const EOS_MARKER: &str = "<eos>";
pub const SELF_MARKER: &str = "<self>";
pub const SIL_MARKER: &str = "sil";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: expected 3 tab-separated fields, found {found}")]
    MalformedLine { line: usize, found: usize },
    #[error("line {line}: sentence terminator without preceding tokens")]
    EmptySentence { line: usize },
    #[error("line {line}: empty {field} field")]
    EmptyField { line: usize, field: &'static str },
    #[error("line {line}: written form {written:?} contains whitespace")]
    WhitespaceInWritten { line: usize, written: String },
    #[error("line {line}: spoken form {spoken:?} has an empty word")]
    InvalidSpoken { line: usize, spoken: String },
    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

impl CorpusError {
    pub fn line(&self) -> Option<usize> {
        match self {
            CorpusError::MalformedLine { line, .. }
            | CorpusError::EmptySentence { line }
            | CorpusError::EmptyField { line, .. }
            | CorpusError::WhitespaceInWritten { line, .. }
            | CorpusError::InvalidSpoken { line, .. } => Some(*line),
            CorpusError::Io(_) => None,
        }
    }
}

/// Semiotic class label. Labels outside the known set are kept verbatim.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SemioticClass {
    Plain,
    Punct,
    Date,
    Cardinal,
    Letters,
    Verbatim,
    Measure,
    Money,
    Ordinal,
    Time,
    Electronic,
    Digit,
    Fraction,
    Telephone,
    Address,
    Other(String),
}

impl SemioticClass {
    const KNOWN: [(&'static str, SemioticClass); 15] = [
        ("PLAIN", SemioticClass::Plain),
        ("PUNCT", SemioticClass::Punct),
        ("DATE", SemioticClass::Date),
        ("CARDINAL", SemioticClass::Cardinal),
        ("LETTERS", SemioticClass::Letters),
        ("VERBATIM", SemioticClass::Verbatim),
        ("MEASURE", SemioticClass::Measure),
        ("MONEY", SemioticClass::Money),
        ("ORDINAL", SemioticClass::Ordinal),
        ("TIME", SemioticClass::Time),
        ("ELECTRONIC", SemioticClass::Electronic),
        ("DIGIT", SemioticClass::Digit),
        ("FRACTION", SemioticClass::Fraction),
        ("TELEPHONE", SemioticClass::Telephone),
        ("ADDRESS", SemioticClass::Address),
    ];

    pub fn from_label(label: &str) -> Self {
        Self::KNOWN
            .iter()
            .find(|(name, _)| *name == label)
            .map(|(_, class)| class.clone())
            .unwrap_or_else(|| SemioticClass::Other(label.to_string()))
    }

    pub fn label(&self) -> &str {
        match self {
            SemioticClass::Other(label) => label,
            known => Self::KNOWN
                .iter()
                .find(|(_, class)| class == known)
                .map(|(name, _)| *name)
                .expect("every known variant has a label"),
        }
    }
}

impl fmt::Display for SemioticClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SpokenForm {
    SelfCopy,
    Silent,
    Words(Vec<String>),
}

impl SpokenForm {
    fn parse(field: &str, line: usize) -> Result<Self, CorpusError> {
        match field {
            SELF_MARKER => Ok(SpokenForm::SelfCopy),
            SIL_MARKER => Ok(SpokenForm::Silent),
            "" => Err(CorpusError::EmptyField { line, field: "spoken" }),
            words => {
                let words: Vec<String> = words.split(' ').map(str::to_string).collect();
                if words.iter().any(|w| w.is_empty() || w.chars().any(char::is_whitespace)) {
                    return Err(CorpusError::InvalidSpoken { line, spoken: field.to_string() });
                }
                Ok(SpokenForm::Words(words))
            }
        }
    }

    pub fn render(&self) -> String {
        match self {
            SpokenForm::SelfCopy => SELF_MARKER.to_string(),
            SpokenForm::Silent => SIL_MARKER.to_string(),
            SpokenForm::Words(words) => words.join(" "),
        }
    }

    pub fn is_changed(&self) -> bool {
        !matches!(self, SpokenForm::SelfCopy)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Token {
    pub class: SemioticClass,
    pub written: String,
    pub spoken: SpokenForm,
}

impl Token {
    pub fn new(class: SemioticClass, written: impl Into<String>, spoken: SpokenForm) -> Self {
        Token { class, written: written.into(), spoken }
    }

    /// Words this token contributes to the sentence verbalization.
    pub fn spoken_words(&self) -> Vec<String> {
        match &self.spoken {
            SpokenForm::SelfCopy => vec![self.written.clone()],
            SpokenForm::Silent => Vec::new(),
            SpokenForm::Words(words) => words.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub id: String,
    pub tokens: Vec<Token>,
}

/// Half-open range of character (Unicode scalar) indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CharSpan {
    pub start: usize,
    pub end: usize,
}

impl CharSpan {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

impl Sentence {
    pub fn new(id: impl Into<String>, tokens: Vec<Token>) -> Self {
        Sentence { id: id.into(), tokens }
    }

    pub fn written_tokens(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.written.as_str()).collect()
    }

    /// Joins written tokens with single spaces and reports each token's span.
    pub fn detokenize(&self) -> (String, Vec<CharSpan>) {
        let mut text = String::new();
        let mut spans = Vec::with_capacity(self.tokens.len());
        let mut cursor = 0;
        for (i, token) in self.tokens.iter().enumerate() {
            if i > 0 {
                text.push(' ');
                cursor += 1;
            }
            let len = token.written.chars().count();
            text.push_str(&token.written);
            spans.push(CharSpan { start: cursor, end: cursor + len });
            cursor += len;
        }
        (text, spans)
    }

    pub fn reference_verbalization(&self) -> Vec<String> {
        self.tokens.iter().flat_map(Token::spoken_words).collect()
    }

    /// For each reference word, the index of the token that produced it.
    pub fn reference_word_owners(&self) -> Vec<usize> {
        self.tokens
            .iter()
            .enumerate()
            .flat_map(|(i, t)| std::iter::repeat_n(i, t.spoken_words().len()))
            .collect()
    }
}

/// Reads sentences in file order, numbering them `s0`, `s1`, ...
pub fn parse_corpus<R: BufRead>(input: R) -> Result<Vec<Sentence>, CorpusError> {
    let mut sentences = Vec::new();
    let mut current: Vec<Token> = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() == 2 && fields[0] == EOS_MARKER && fields[1] == EOS_MARKER {
            if current.is_empty() {
                return Err(CorpusError::EmptySentence { line: line_no });
            }
            let id = format!("s{}", sentences.len());
            sentences.push(Sentence::new(id, std::mem::take(&mut current)));
            continue;
        }
        if fields.len() != 3 {
            return Err(CorpusError::MalformedLine { line: line_no, found: fields.len() });
        }
        let (class, written, spoken) = (fields[0], fields[1], fields[2]);
        if class.is_empty() {
            return Err(CorpusError::EmptyField { line: line_no, field: "class" });
        }
        if written.is_empty() {
            return Err(CorpusError::EmptyField { line: line_no, field: "written" });
        }
        if written.chars().any(char::is_whitespace) {
            return Err(CorpusError::WhitespaceInWritten {
                line: line_no,
                written: written.to_string(),
            });
        }
        current.push(Token {
            class: SemioticClass::from_label(class),
            written: written.to_string(),
            spoken: SpokenForm::parse(spoken, line_no)?,
        });
    }
    // A final sentence without its terminator is still a sentence.
    if !current.is_empty() {
        let id = format!("s{}", sentences.len());
        sentences.push(Sentence::new(id, current));
    }
    Ok(sentences)
}

pub fn parse_corpus_str(input: &str) -> Result<Vec<Sentence>, CorpusError> {
    parse_corpus(input.as_bytes())
}

pub fn write_corpus<W: Write>(mut out: W, sentences: &[Sentence]) -> io::Result<()> {
    for sentence in sentences {
        for token in &sentence.tokens {
            writeln!(out, "{}\t{}\t{}", token.class, token.written, token.spoken.render())?;
        }
        writeln!(out, "{EOS_MARKER}\t{EOS_MARKER}")?;
    }
    Ok(())
}

pub fn corpus_to_string(sentences: &[Sentence]) -> String {
    let mut buf = Vec::new();
    write_corpus(&mut buf, sentences).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("corpus text is UTF-8")
}

/// Deterministic partition of a corpus by sentence index: every tenth
/// sentence starting at index 8 is dev, starting at 9 is test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    All,
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn contains(self, index: usize) -> bool {
        match self {
            Split::All => true,
            Split::Train => index % 10 < 8,
            Split::Dev => index % 10 == 8,
            Split::Test => index % 10 == 9,
        }
    }

    pub fn select(self, sentences: &[Sentence]) -> Vec<Sentence> {
        sentences
            .iter()
            .enumerate()
            .filter(|(i, _)| self.contains(*i))
            .map(|(_, s)| s.clone())
            .collect()
    }
}

impl std::str::FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all" => Ok(Split::All),
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?} (expected all|train|dev|test)")),
        }
    }
}
