//! Stage two: a sequence-to-sequence model spelling out non-trivial tokens,
//! decoded by beam search with an optional coverage-lexicon constraint.

pub mod beam;
pub mod lexicon;

pub use beam::{beam_search, BeamConfig, BeamError, BeamOutcome, Hypothesis, Trie};
pub use lexicon::{build_lexicon, CoverageLexicon, LexiconError};

use crate::corpus::CharSpan;
use crate::neural::graph::{Graph, Var};
use crate::neural::layers::{Dropout, Linear, ModelConfig, Seq2Seq};
use crate::neural::params::{Init, ParamSource, Parameters};
use crate::neural::{Array, NeuralError};
use crate::train::IGNORE;
use crate::vocab::{char_ids, CharVocab, WordVocab, BOS, CHAR_BOUNDARY, EOS, UNK};

#[derive(Debug, Clone)]
pub struct Verbalizer {
    pub seq: Seq2Seq,
    pub context_projection: Linear,
}

/// What the verbalizer sees for one token.
#[derive(Debug, Clone, PartialEq)]
pub struct VerbalizerInput {
    /// Token characters, optionally wrapped in neighbor context.
    pub chars: Vec<usize>,
    /// Pooled context state of the token, `[1, d_model]`.
    pub context: Array,
}

/// Ids of the token's characters; with `window > 0`, up to `window`
/// characters of each neighbor side are added, separated by boundary ids.
pub fn token_chars(vocab: &CharVocab, text: &str, span: CharSpan, window: usize) -> Vec<usize> {
    let ids = char_ids(vocab, text);
    let mut out = Vec::new();
    if window > 0 {
        out.extend_from_slice(&ids[span.start.saturating_sub(window)..span.start]);
        out.push(CHAR_BOUNDARY);
    }
    out.extend_from_slice(&ids[span.start..span.end]);
    if window > 0 {
        out.push(CHAR_BOUNDARY);
        out.extend_from_slice(&ids[span.end..(span.end + window).min(ids.len())]);
    }
    out
}

impl Verbalizer {
    pub fn build(src: &mut dyn ParamSource, cfg: &ModelConfig) -> Result<Self, NeuralError> {
        Ok(Verbalizer {
            seq: Seq2Seq::build(src, "verb", cfg)?,
            context_projection: Linear::build(src, "verb.ctx", cfg.d_model, cfg.d_model, Init::FanIn(cfg.d_model))?,
        })
    }

    /// Encoder states over the projected context followed by the characters.
    pub fn memory(&self, g: &mut Graph<'_>, context: Var, chars: &[usize], dropout: &mut Dropout<'_>) -> Result<Var, NeuralError> {
        let first = self.context_projection.forward(g, context);
        let rows = self.seq.source.lookup(g, chars)?;
        let all = g.concat_rows(&[first, rows]);
        self.seq.encode_rows(g, all, dropout)
    }

    /// Teacher-forced mean cross-entropy of `target` (word ids) plus the end marker.
    pub fn loss(&self, g: &mut Graph<'_>, memory: Var, target: &[usize], dropout: &mut Dropout<'_>) -> Result<Var, NeuralError> {
        let mut prefix = vec![BOS];
        prefix.extend_from_slice(target);
        let mut gold = target.to_vec();
        gold.push(EOS);
        let logits = self.seq.decode(g, &prefix, memory, dropout)?;
        g.cross_entropy(logits, &gold, IGNORE).ok_or(NeuralError::AllPad)
    }
}

fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_z = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - log_z).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verbalization {
    pub words: Vec<String>,
    /// An unknown word was emitted or decoding never finished.
    pub unrecoverable: bool,
    /// The lexicon constraint was applied to the returned output.
    pub constrained: bool,
    /// The constraint pruned every hypothesis and decoding fell back to unconstrained.
    pub fell_back: bool,
}

/// Beam-decodes one token. When `permitted` is given it constrains the
/// search; if that prunes everything, the unconstrained result is returned
/// with `fell_back` set.
pub fn verbalize(
    verbalizer: &Verbalizer,
    params: &Parameters,
    input: &VerbalizerInput,
    vocab: &WordVocab,
    beam: &BeamConfig,
    permitted: Option<&Trie>,
) -> Result<Verbalization, NeuralError> {
    let memory = {
        let mut g = Graph::new(params);
        let ctx = g.input(input.context.clone());
        let m = verbalizer.memory(&mut g, ctx, &input.chars, &mut Dropout::off())?;
        g.value(m).clone()
    };
    let step = |prefix: &[usize]| -> Result<Vec<f64>, NeuralError> {
        let mut g = Graph::new(params);
        let mem = g.input(memory.clone());
        let mut ids = Vec::with_capacity(prefix.len() + 1);
        ids.push(BOS);
        ids.extend_from_slice(prefix);
        let logits = verbalizer.seq.decode(&mut g, &ids, mem, &mut Dropout::off())?;
        let v = g.value(logits);
        let mut lp = log_softmax(v.row(v.rows() - 1));
        lp[BOS] = f64::NEG_INFINITY;
        Ok(lp)
    };
    let run = |trie: Option<&Trie>| match beam_search(step, EOS, beam, trie) {
        Ok(o) => Ok(Some(o)),
        Err(BeamError::EmptyBeam) => Ok(None),
        Err(BeamError::Step(e)) => Err(e),
        Err(BeamError::ZeroWidth) => Err(NeuralError::Config("beam width must be at least 1".into())),
    };
    let (outcome, constrained, fell_back) = match permitted {
        Some(trie) => match run(Some(trie))? {
            Some(o) => (Some(o), true, false),
            None => (run(None)?, false, true),
        },
        None => (run(None)?, false, false),
    };
    let Some(outcome) = outcome else {
        return Ok(Verbalization { words: Vec::new(), unrecoverable: true, constrained, fell_back });
    };
    let unknown = outcome.best.tokens.iter().any(|&id| id == UNK || vocab.item(id).is_none());
    let words = outcome
        .best
        .tokens
        .iter()
        .map(|&id| vocab.item(id).cloned().unwrap_or_else(|| crate::codec::UNK_WORD.to_string()))
        .collect();
    Ok(Verbalization { words, unrecoverable: unknown || outcome.max_steps_exceeded, constrained, fell_back })
}
