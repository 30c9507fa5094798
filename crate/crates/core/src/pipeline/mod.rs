//! End-to-end normalization runs and sentence-error-rate evaluation.

mod report;

pub use report::{error_reduction, side_by_side, ComparisonRow, SideBySide, REPORT_FORMAT, REPORT_VERSION};

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::codec::{decode_output, Representation, Symbol};
use crate::corpus::{Sentence, SpokenForm};
use crate::neural::NeuralError;
use crate::single_pass::SinglePassModel;
use crate::tagger::TagLabel;
use crate::two_stage::{SentenceAnalysis, TwoStageModel};
use crate::verbalizer::{BeamConfig, CoverageLexicon, Verbalization};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("cannot evaluate an empty split")]
    EmptySplit,
    #[error("reports cover different sentences: {0}")]
    SplitMismatch(String),
    #[error("base error rate is zero")]
    ZeroBase,
    #[error("run mode {mode} does not fit the loaded model")]
    ModeMismatch { mode: String },
    #[error("report line {line}: {message}")]
    BadReport { line: usize, message: String },
    #[error(transparent)]
    Neural(#[from] NeuralError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunMode {
    TwoStage { golden_tags: bool },
    SinglePass { repr: Representation, golden_tokenized_source: bool },
}

impl fmt::Display for RunMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunMode::TwoStage { golden_tags: false } => f.write_str("two-stage"),
            RunMode::TwoStage { golden_tags: true } => f.write_str("two-stage+golden"),
            RunMode::SinglePass { repr, golden_tokenized_source } => {
                write!(f, "single-pass:{}", repr.name())?;
                if *golden_tokenized_source && repr.is_tokenized() {
                    f.write_str("+golden-tokenized")?;
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "token", rename_all = "snake_case")]
pub enum FailureKind {
    None,
    Mismatch,
    UnparseableEdits,
    /// Unknown word emitted or decoding never finished, at this token.
    Unrecoverable(usize),
    /// The sentence exceeds the model's maximum length.
    TooLong,
}

impl FailureKind {
    pub fn name(&self) -> &'static str {
        match self {
            FailureKind::None => "none",
            FailureKind::Mismatch => "mismatch",
            FailureKind::UnparseableEdits => "unparseable_edits",
            FailureKind::Unrecoverable(_) => "unrecoverable",
            FailureKind::TooLong => "too_long",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceResult {
    pub id: String,
    pub written: Vec<String>,
    pub predicted: Vec<String>,
    pub reference: Vec<String>,
    pub error: bool,
    pub failure: FailureKind,
    /// Token blamed for the error.
    pub offending_token: Option<usize>,
    pub offending_class: Option<String>,
    pub offending_reference: Vec<String>,
    /// Tokens whose lexicon constraint pruned every hypothesis.
    pub fallback_tokens: Vec<usize>,
}

impl SentenceResult {
    fn new(s: &Sentence, predicted: Vec<String>, failure: FailureKind, offending_token: Option<usize>) -> Self {
        let offending = offending_token.and_then(|i| s.tokens.get(i));
        SentenceResult {
            id: s.id.clone(),
            written: s.tokens.iter().map(|t| t.written.clone()).collect(),
            predicted,
            reference: s.reference_verbalization(),
            error: failure != FailureKind::None,
            offending_class: offending.map(|t| t.class.label().to_string()),
            offending_reference: offending.map(|t| t.spoken_words()).unwrap_or_default(),
            failure,
            offending_token,
            fallback_tokens: Vec::new(),
        }
    }
}

/// Token blamed for a wrong prediction: owner of the first reference word
/// after the longest common prefix (heuristic for whole-sentence outputs).
pub fn first_offending_token(s: &Sentence, predicted: &[String]) -> Option<usize> {
    let reference = s.reference_verbalization();
    if predicted == reference.as_slice() {
        return None;
    }
    let owners = s.reference_word_owners();
    let k = predicted.iter().zip(&reference).take_while(|(a, b)| a == b).count();
    match owners.get(k) {
        Some(&t) => Some(t),
        None => owners.last().copied().or(Some(0)),
    }
}

pub trait TokenTagger {
    fn tag(&self, s: &Sentence) -> Result<Vec<TagLabel>, NeuralError>;
}

pub trait TokenVerbalizer {
    fn verbalize(&self, s: &Sentence, token: usize) -> Result<Verbalization, NeuralError>;
}

/// Tags taken from the corpus.
pub struct ReferenceTagger;

impl TokenTagger for ReferenceTagger {
    fn tag(&self, s: &Sentence) -> Result<Vec<TagLabel>, NeuralError> {
        Ok(s.tokens.iter().map(|t| TagLabel::from_spoken(&t.spoken)).collect())
    }
}

/// Spells every token exactly as the corpus does.
pub struct ReferenceVerbalizer;

impl TokenVerbalizer for ReferenceVerbalizer {
    fn verbalize(&self, s: &Sentence, token: usize) -> Result<Verbalization, NeuralError> {
        let t = &s.tokens[token];
        let words = match &t.spoken {
            SpokenForm::Words(w) => w.clone(),
            _ => vec![t.written.clone()],
        };
        Ok(Verbalization { words, unrecoverable: false, constrained: false, fell_back: false })
    }
}

impl TokenTagger for TwoStageModel {
    fn tag(&self, s: &Sentence) -> Result<Vec<TagLabel>, NeuralError> {
        TwoStageModel::tag(self, s)
    }
}

/// The trained verbalizer with beam settings and an optional lexicon. Keeps
/// the context analysis of the most recent sentence.
pub struct ModelVerbalizer<'a> {
    pub model: &'a TwoStageModel,
    pub beam: BeamConfig,
    pub lexicon: Option<&'a CoverageLexicon>,
    cache: RefCell<Option<(String, SentenceAnalysis)>>,
}

impl<'a> ModelVerbalizer<'a> {
    pub fn new(model: &'a TwoStageModel, beam: BeamConfig, lexicon: Option<&'a CoverageLexicon>) -> Self {
        ModelVerbalizer { model, beam, lexicon, cache: RefCell::new(None) }
    }
}

impl TokenVerbalizer for ModelVerbalizer<'_> {
    fn verbalize(&self, s: &Sentence, token: usize) -> Result<Verbalization, NeuralError> {
        let mut cache = self.cache.borrow_mut();
        if cache.as_ref().is_none_or(|(id, _)| *id != s.id) {
            *cache = Some((s.id.clone(), self.model.analyze(s)?));
        }
        let (_, analysis) = cache.as_ref().expect("filled above");
        self.model.verbalize_token(analysis, &s.tokens[token].written, token, &self.beam, self.lexicon)
    }
}

pub enum ModelBundle<'a> {
    TwoStage { tagger: &'a dyn TokenTagger, verbalizer: &'a dyn TokenVerbalizer },
    SinglePass { model: &'a SinglePassModel, beam: BeamConfig },
}

fn too_long(e: &NeuralError) -> bool {
    matches!(e, NeuralError::LenExceeded { .. })
}

fn normalize_two_stage(
    tagger: &dyn TokenTagger,
    verbalizer: &dyn TokenVerbalizer,
    s: &Sentence,
    golden_tags: bool,
) -> Result<SentenceResult, NeuralError> {
    let tags = if golden_tags { ReferenceTagger.tag(s) } else { tagger.tag(s) };
    let tags = match tags {
        Ok(t) => t,
        Err(e) if too_long(&e) => return Ok(SentenceResult::new(s, Vec::new(), FailureKind::TooLong, None)),
        Err(e) => return Err(e),
    };
    let mut predicted = Vec::new();
    let mut first_wrong = None;
    let mut unrecoverable = None;
    let mut fallback = Vec::new();
    for (i, (tag, token)) in tags.iter().zip(&s.tokens).enumerate() {
        let words = match tag {
            TagLabel::Trivial => vec![token.written.clone()],
            TagLabel::Sil => Vec::new(),
            TagLabel::NonTrivial => {
                let v = match verbalizer.verbalize(s, i) {
                    Ok(v) => v,
                    Err(e) if too_long(&e) => {
                        return Ok(SentenceResult::new(s, Vec::new(), FailureKind::TooLong, Some(i)))
                    }
                    Err(e) => return Err(e),
                };
                if v.fell_back {
                    fallback.push(i);
                }
                if v.unrecoverable && unrecoverable.is_none() {
                    unrecoverable = Some(i);
                }
                v.words
            }
        };
        if first_wrong.is_none() && words != token.spoken_words() {
            first_wrong = Some(i);
        }
        predicted.extend(words);
    }
    let (failure, offending) = match (unrecoverable, first_wrong) {
        (Some(i), _) => (FailureKind::Unrecoverable(i), Some(i)),
        (None, Some(i)) => (FailureKind::Mismatch, Some(i)),
        (None, None) => (FailureKind::None, None),
    };
    let mut r = SentenceResult::new(s, predicted, failure, offending);
    r.fallback_tokens = fallback;
    Ok(r)
}

fn normalize_single_pass(
    model: &SinglePassModel,
    beam: &BeamConfig,
    s: &Sentence,
    repr: Representation,
    golden_tokenized: bool,
) -> Result<SentenceResult, NeuralError> {
    if repr != model.repr() {
        return Err(NeuralError::Config(format!("model was trained for {}, not {}", model.repr().name(), repr.name())));
    }
    let out = match model.predict(s, golden_tokenized, beam) {
        Ok(o) => o,
        Err(e) if too_long(&e) => return Ok(SentenceResult::new(s, Vec::new(), FailureKind::TooLong, None)),
        Err(e) => return Err(e),
    };
    Ok(judge_output(s, repr, &out.symbols, out.unrecoverable))
}

/// Scores raw single-pass output symbols against the reference.
pub fn judge_output(s: &Sentence, repr: Representation, symbols: &[Symbol], unrecoverable: bool) -> SentenceResult {
    let words = match decode_output(s, repr, symbols) {
        Ok(w) => w,
        Err(_) => return SentenceResult::new(s, Vec::new(), FailureKind::UnparseableEdits, None),
    };
    let offending = first_offending_token(s, &words);
    let failure = if unrecoverable || words.iter().any(|w| w == crate::codec::UNK_WORD) {
        FailureKind::Unrecoverable(offending.unwrap_or(0))
    } else if offending.is_some() {
        FailureKind::Mismatch
    } else {
        FailureKind::None
    };
    let offending = if failure == FailureKind::None { None } else { offending.or(Some(0)) };
    SentenceResult::new(s, words, failure, offending)
}

pub fn normalize_sentence(bundle: &ModelBundle<'_>, s: &Sentence, mode: RunMode) -> Result<SentenceResult, EvalError> {
    match (bundle, mode) {
        (ModelBundle::TwoStage { tagger, verbalizer }, RunMode::TwoStage { golden_tags }) => {
            Ok(normalize_two_stage(*tagger, *verbalizer, s, golden_tags)?)
        }
        (ModelBundle::SinglePass { model, beam }, RunMode::SinglePass { repr, golden_tokenized_source }) => {
            if repr != model.repr() {
                return Err(EvalError::ModeMismatch { mode: mode.to_string() });
            }
            Ok(normalize_single_pass(model, beam, s, repr, golden_tokenized_source)?)
        }
        _ => Err(EvalError::ModeMismatch { mode: mode.to_string() }),
    }
}

/// Exact error rate `errors / total`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ser {
    pub errors: usize,
    pub total: usize,
}

impl Ser {
    pub fn as_f64(self) -> f64 {
        self.errors as f64 / self.total as f64
    }
}

impl fmt::Display for Ser {
    /// Fraction rounded half-up to four decimals, using integer arithmetic.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (e, t) = (self.errors as u128, self.total as u128);
        let scaled = (e * 20_000 + t) / (2 * t);
        write!(f, "{}.{:04}", scaled / 10_000, scaled % 10_000)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: String,
    pub total: usize,
    pub errors: usize,
    pub by_failure: BTreeMap<String, usize>,
    pub by_class: BTreeMap<String, usize>,
    pub sentences: Vec<SentenceResult>,
}

impl EvalReport {
    pub fn from_results(mode: String, sentences: Vec<SentenceResult>) -> Result<Self, EvalError> {
        if sentences.is_empty() {
            return Err(EvalError::EmptySplit);
        }
        let mut by_failure = BTreeMap::new();
        let mut by_class = BTreeMap::new();
        for r in sentences.iter().filter(|r| r.error) {
            *by_failure.entry(r.failure.name().to_string()).or_insert(0) += 1;
            let class = r.offending_class.clone().unwrap_or_else(|| "UNKNOWN".to_string());
            *by_class.entry(class).or_insert(0) += 1;
        }
        let errors = sentences.iter().filter(|r| r.error).count();
        Ok(EvalReport { mode, total: sentences.len(), errors, by_failure, by_class, sentences })
    }

    pub fn ser(&self) -> Ser {
        Ser { errors: self.errors, total: self.total }
    }
}

pub fn evaluate(bundle: &ModelBundle<'_>, sentences: &[Sentence], mode: RunMode) -> Result<EvalReport, EvalError> {
    if sentences.is_empty() {
        return Err(EvalError::EmptySplit);
    }
    let results = sentences.iter().map(|s| normalize_sentence(bundle, s, mode)).collect::<Result<Vec<_>, _>>()?;
    EvalReport::from_results(mode.to_string(), results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tests::table1_sentence;
    use crate::corpus::{SemioticClass, Token};

    /// Tags one written form as trivial, everything else from the corpus.
    struct TrivialFor(&'static str);

    impl TokenTagger for TrivialFor {
        fn tag(&self, s: &Sentence) -> Result<Vec<TagLabel>, NeuralError> {
            Ok(s.tokens
                .iter()
                .map(|t| if t.written == self.0 { TagLabel::Trivial } else { TagLabel::from_spoken(&t.spoken) })
                .collect())
        }
    }

    fn oracle() -> ModelBundle<'static> {
        ModelBundle::TwoStage { tagger: &ReferenceTagger, verbalizer: &ReferenceVerbalizer }
    }

    fn letters_sentence() -> Sentence {
        let w = |s: &str| s.split(' ').map(String::from).collect::<Vec<_>>();
        Sentence::new(
            "t4",
            vec![
                Token::new(SemioticClass::Plain, "the", SpokenForm::SelfCopy),
                Token::new(SemioticClass::Letters, "AAUS", SpokenForm::Words(w("a a u s"))),
            ],
        )
    }

    #[test]
    fn perfect_pipeline_is_correct() {
        let r = normalize_sentence(&oracle(), &table1_sentence(), RunMode::TwoStage { golden_tags: false }).unwrap();
        assert!(!r.error);
        assert_eq!(r.failure, FailureKind::None);
    }

    #[test]
    fn mistagged_letters_are_a_mismatch() {
        let bundle = ModelBundle::TwoStage { tagger: &TrivialFor("AAUS"), verbalizer: &ReferenceVerbalizer };
        let r = normalize_sentence(&bundle, &letters_sentence(), RunMode::TwoStage { golden_tags: false }).unwrap();
        assert_eq!(r.predicted, vec!["the", "AAUS"]);
        assert_eq!(r.failure, FailureKind::Mismatch);
        assert_eq!((r.offending_token, r.offending_class.as_deref()), (Some(1), Some("LETTERS")));
        let golden = normalize_sentence(&bundle, &letters_sentence(), RunMode::TwoStage { golden_tags: true }).unwrap();
        assert!(!golden.error);
    }

    #[test]
    fn ser_is_exact() {
        let mut results: Vec<SentenceResult> = (0..4)
            .map(|i| {
                let mut s = table1_sentence();
                s.id = format!("s{i}");
                normalize_two_stage(&ReferenceTagger, &ReferenceVerbalizer, &s, false).unwrap()
            })
            .collect();
        results[2].error = true;
        results[2].failure = FailureKind::Mismatch;
        let report = EvalReport::from_results("x".into(), results).unwrap();
        assert_eq!(report.ser(), Ser { errors: 1, total: 4 });
        assert_eq!(report.ser().to_string(), "0.2500");
        assert_eq!(Ser { errors: 2, total: 3 }.to_string(), "0.6667");
        assert_eq!(Ser { errors: 0, total: 7 }.to_string(), "0.0000");
        assert_eq!(Ser { errors: 7, total: 7 }.to_string(), "1.0000");
    }

    #[test]
    fn empty_split_is_rejected() {
        assert!(matches!(evaluate(&oracle(), &[], RunMode::TwoStage { golden_tags: true }), Err(EvalError::EmptySplit)));
    }

    #[test]
    fn self_copy_corpus_has_zero_ser() {
        let s = Sentence::new("a", vec![Token::new(SemioticClass::Plain, "hi", SpokenForm::SelfCopy)]);
        let report = evaluate(&oracle(), &[s.clone(), s], RunMode::TwoStage { golden_tags: false }).unwrap();
        assert_eq!(report.errors, 0);
    }

    #[test]
    fn offending_token_by_common_prefix() {
        let s = table1_sentence();
        let mut words = s.reference_verbalization();
        assert_eq!(first_offending_token(&s, &words), None);
        words[4] = "two".into();
        assert_eq!(first_offending_token(&s, &words), Some(3));
        words.truncate(4);
        assert_eq!(first_offending_token(&s, &words), Some(3));
        let mut longer = s.reference_verbalization();
        longer.push("extra".into());
        assert_eq!(first_offending_token(&s, &longer), Some(5));
    }

    #[test]
    fn invalid_program_is_unparseable() {
        let s = table1_sentence();
        let symbols = crate::codec::parse_symbols("pos13 x pos10").unwrap();
        let r = judge_output(&s, Representation::UntokEdits, &symbols, false);
        assert_eq!(r.failure, FailureKind::UnparseableEdits);
        assert!(r.error);
        let good = crate::codec::encode_target(&s, Representation::UntokEdits);
        assert!(!judge_output(&s, Representation::UntokEdits, &good, false).error);
        assert_eq!(judge_output(&s, Representation::UntokEdits, &good, true).failure, FailureKind::Unrecoverable(0));
    }

    #[test]
    fn mode_must_fit_bundle() {
        let mode = RunMode::SinglePass { repr: Representation::TokEdits, golden_tokenized_source: true };
        assert!(matches!(normalize_sentence(&oracle(), &table1_sentence(), mode), Err(EvalError::ModeMismatch { .. })));
    }
}
