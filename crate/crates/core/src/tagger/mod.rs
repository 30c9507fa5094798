//! Stage one: a character-level sentence-context encoder shared with the
//! verbalizer, and a head labeling each token trivial, silent or non-trivial.

pub mod pretrain;

pub use pretrain::{masked_accuracy, pretrain_masked_lm, MlmConfig, MlmLogRecord, PretrainedEncoder};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{CharSpan, SpokenForm};
use crate::neural::graph::{Graph, Var};
use crate::neural::layers::{Dropout, Linear, ModelConfig, TransformerEncoder};
use crate::neural::params::{Init, ParamSource};
use crate::neural::NeuralError;

/// Parameter-name prefix of the shared context encoder.
pub const CONTEXT_PREFIX: &str = "ctx.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TagLabel {
    Trivial,
    Sil,
    NonTrivial,
}

impl TagLabel {
    /// Tie-break order for equal logits.
    pub const ALL: [TagLabel; 3] = [TagLabel::Trivial, TagLabel::Sil, TagLabel::NonTrivial];

    pub fn from_spoken(spoken: &SpokenForm) -> Self {
        match spoken {
            SpokenForm::SelfCopy => TagLabel::Trivial,
            SpokenForm::Silent => TagLabel::Sil,
            SpokenForm::Words(_) => TagLabel::NonTrivial,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            TagLabel::Trivial => "self",
            TagLabel::Sil => "sil",
            TagLabel::NonTrivial => "NT",
        }
    }
}

impl fmt::Display for TagLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ContextEncoderMode {
    Scratch,
    PretrainedFrozen,
    PretrainedFineTune,
}

impl ContextEncoderMode {
    pub fn needs_pretraining(self) -> bool {
        self != ContextEncoderMode::Scratch
    }

    pub fn name(self) -> &'static str {
        match self {
            ContextEncoderMode::Scratch => "scratch",
            ContextEncoderMode::PretrainedFrozen => "frozen",
            ContextEncoderMode::PretrainedFineTune => "fine-tune",
        }
    }
}

impl FromStr for ContextEncoderMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "scratch" => Ok(ContextEncoderMode::Scratch),
            "frozen" => Ok(ContextEncoderMode::PretrainedFrozen),
            "fine-tune" => Ok(ContextEncoderMode::PretrainedFineTune),
            other => Err(format!("unknown encoder mode {other:?} (expected scratch|frozen|fine-tune)")),
        }
    }
}

/// The shared encoder over sentence characters (spaces as boundary ids).
#[derive(Debug, Clone)]
pub struct ContextEncoder {
    pub encoder: TransformerEncoder,
}

impl ContextEncoder {
    pub fn build(src: &mut dyn ParamSource, cfg: &ModelConfig) -> Result<Self, NeuralError> {
        Ok(ContextEncoder { encoder: TransformerEncoder::build(src, "ctx", cfg.source_vocab_size, cfg)? })
    }

    /// One state per character, `[len, d_model]`.
    pub fn encode_context(&self, g: &mut Graph<'_>, ids: &[usize], dropout: &mut Dropout<'_>) -> Result<Var, NeuralError> {
        self.encoder.forward(g, ids, dropout)
    }
}

/// Mean-pools each token's character states and projects to three logits.
#[derive(Debug, Clone)]
pub struct TaggerHead {
    pub projection: Linear,
}

impl TaggerHead {
    pub fn build(src: &mut dyn ParamSource, d_model: usize) -> Result<Self, NeuralError> {
        Ok(TaggerHead { projection: Linear::build(src, "tag.out", d_model, 3, Init::Zeros)? })
    }

    /// `[tokens, d_model]` pooled states.
    pub fn pool(g: &mut Graph<'_>, states: Var, spans: &[CharSpan]) -> Var {
        let rows: Vec<Var> = spans.iter().map(|s| g.mean_rows(states, s.start, s.end)).collect();
        g.concat_rows(&rows)
    }

    pub fn logits(&self, g: &mut Graph<'_>, pooled: Var) -> Var {
        self.projection.forward(g, pooled)
    }
}

/// Highest logit; ties go to the earliest label in [`TagLabel::ALL`].
pub fn argmax_label(logits: &[f64]) -> TagLabel {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate().take(3) {
        if v > logits[best] {
            best = i;
        }
    }
    TagLabel::ALL[best]
}

/// Labels every span from pooled context states.
pub fn classify_tokens(g: &mut Graph<'_>, states: Var, spans: &[CharSpan], head: &TaggerHead) -> Vec<TagLabel> {
    let pooled = TaggerHead::pool(g, states, spans);
    let logits = head.logits(g, pooled);
    let value = g.value(logits);
    (0..spans.len()).map(|r| argmax_label(value.row(r))).collect()
}
