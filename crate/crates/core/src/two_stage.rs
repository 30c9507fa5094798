//! The jointly trained two-stage model: shared context encoder, tag head,
//! and verbalizer.

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CharSpan, Sentence, SpokenForm};
use crate::neural::layers::{Dropout, ModelConfig};
use crate::neural::params::{Binder, Initializer, ParamSource, Parameters};
use crate::neural::{Adam, AdamConfig, LrSchedule, Array, Checkpoint, Graph, NeuralError, RngState, Var};
use crate::tagger::{
    argmax_label, ContextEncoder, ContextEncoderMode, PretrainedEncoder, TagLabel, TaggerHead, CONTEXT_PREFIX,
};
use crate::train::{apply_batch, BatchSampler, LogRecord, TrainError};
use crate::verbalizer::{token_chars, verbalize, BeamConfig, CoverageLexicon, Verbalization, Verbalizer, VerbalizerInput};
use crate::vocab::{char_ids, char_vocab_from_texts, CharVocab, Vocab, WordVocab, OUTPUT_RESERVED};

pub const CHECKPOINT_KIND: &str = "two-stage";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoStageConfig {
    pub model: ModelConfig,
    /// Weight of the verbalizer loss in the joint objective.
    pub lambda: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub clip: Option<f64>,
    pub seed: u64,
    pub encoder_mode: ContextEncoderMode,
    /// Neighbor characters shown to the verbalizer on each side.
    pub neighbor_window: usize,
    #[serde(default)]
    pub schedule: LrSchedule,
}

impl Default for TwoStageConfig {
    fn default() -> Self {
        TwoStageConfig {
            model: ModelConfig::default(),
            lambda: 1.0,
            steps: 3000,
            batch_size: 8,
            adam: AdamConfig { learning_rate: 2e-3, ..AdamConfig::default() },
            clip: Some(1.0),
            schedule: LrSchedule::Linear,
            seed: 0,
            encoder_mode: ContextEncoderMode::Scratch,
            neighbor_window: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TwoStageModel {
    pub config: TwoStageConfig,
    pub char_vocab: CharVocab,
    pub word_vocab: WordVocab,
    pub params: Parameters,
    pub rng: RngState,
    pub log: Vec<LogRecord>,
    /// Training sentences skipped for exceeding `max_len`.
    pub skipped: usize,
    context: ContextEncoder,
    tag_head: TaggerHead,
    verbalizer: Verbalizer,
}

/// Context states of one sentence, reusable for tagging and verbalization.
#[derive(Debug, Clone)]
pub struct SentenceAnalysis {
    pub text: String,
    pub spans: Vec<CharSpan>,
    pub states: Array,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    kind: String,
    config: TwoStageConfig,
    char_vocab: CharVocab,
    word_vocab: WordVocab,
    skipped: usize,
}

struct Example {
    ids: Vec<usize>,
    spans: Vec<CharSpan>,
    tags: Vec<usize>,
    /// (token index, verbalizer characters, target word ids)
    nt: Vec<(usize, Vec<usize>, Vec<usize>)>,
}

fn model_parts(
    src: &mut dyn ParamSource,
    cfg: &TwoStageConfig,
    chars: usize,
    words: usize,
) -> Result<(ContextEncoder, TaggerHead, Verbalizer), NeuralError> {
    let ctx_cfg = ModelConfig { source_vocab_size: chars, target_vocab_size: 0, ..cfg.model.clone() };
    let verb_cfg = ModelConfig { source_vocab_size: chars, target_vocab_size: words, ..cfg.model.clone() };
    let context = ContextEncoder::build(src, &ctx_cfg)?;
    let tag_head = TaggerHead::build(src, cfg.model.d_model)?;
    let verbalizer = Verbalizer::build(src, &verb_cfg)?;
    Ok((context, tag_head, verbalizer))
}

pub fn word_vocab_from(sentences: &[Sentence]) -> WordVocab {
    let words = sentences.iter().flat_map(|s| &s.tokens).flat_map(|t| match &t.spoken {
        SpokenForm::Words(w) => w.clone(),
        _ => Vec::new(),
    });
    Vocab::new(OUTPUT_RESERVED, words)
}

impl TwoStageModel {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = Meta {
            kind: CHECKPOINT_KIND.into(),
            config: self.config.clone(),
            char_vocab: self.char_vocab.clone(),
            word_vocab: self.word_vocab.clone(),
            skipped: self.skipped,
        };
        Checkpoint { meta: serde_json::to_value(meta).expect("meta serializes"), params: self.params.clone(), rng: self.rng }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self, NeuralError> {
        let meta: Meta = serde_json::from_value(ck.meta).map_err(|e| NeuralError::Checkpoint(e.to_string()))?;
        if meta.kind != CHECKPOINT_KIND {
            return Err(NeuralError::Checkpoint(format!("expected {CHECKPOINT_KIND}, found {}", meta.kind)));
        }
        let (context, tag_head, verbalizer) =
            model_parts(&mut Binder { params: &ck.params }, &meta.config, meta.char_vocab.len(), meta.word_vocab.len())?;
        Ok(TwoStageModel {
            config: meta.config,
            char_vocab: meta.char_vocab,
            word_vocab: meta.word_vocab,
            params: ck.params,
            rng: ck.rng,
            log: Vec::new(),
            skipped: meta.skipped,
            context,
            tag_head,
            verbalizer,
        })
    }

    pub fn analyze(&self, s: &Sentence) -> Result<SentenceAnalysis, NeuralError> {
        let (text, spans) = s.detokenize();
        let mut g = Graph::new(&self.params);
        let states = self.context.encode_context(&mut g, &char_ids(&self.char_vocab, &text), &mut Dropout::off())?;
        let states = g.value(states).clone();
        Ok(SentenceAnalysis { text, spans, states })
    }

    pub fn tags(&self, a: &SentenceAnalysis) -> Vec<TagLabel> {
        let mut g = Graph::new(&self.params);
        let states = g.input(a.states.clone());
        let pooled = TaggerHead::pool(&mut g, states, &a.spans);
        let logits = self.tag_head.logits(&mut g, pooled);
        let v = g.value(logits);
        (0..a.spans.len()).map(|r| argmax_label(v.row(r))).collect()
    }

    pub fn tag(&self, s: &Sentence) -> Result<Vec<TagLabel>, NeuralError> {
        Ok(self.tags(&self.analyze(s)?))
    }

    pub fn verbalizer_input(&self, a: &SentenceAnalysis, token: usize) -> VerbalizerInput {
        let span = a.spans[token];
        let mut g = Graph::new(&self.params);
        let states = g.input(a.states.clone());
        let pooled = g.mean_rows(states, span.start, span.end);
        VerbalizerInput {
            chars: token_chars(&self.char_vocab, &a.text, span, self.config.neighbor_window),
            context: g.value(pooled).clone(),
        }
    }

    /// Decodes token `token`, constrained by `lexicon` when it covers the written form.
    pub fn verbalize_token(
        &self,
        a: &SentenceAnalysis,
        written: &str,
        token: usize,
        beam: &BeamConfig,
        lexicon: Option<&CoverageLexicon>,
    ) -> Result<Verbalization, NeuralError> {
        let input = self.verbalizer_input(a, token);
        let trie = lexicon.and_then(|l| l.trie(written, &self.word_vocab));
        verbalize(&self.verbalizer, &self.params, &input, &self.word_vocab, beam, trie.as_ref())
    }

    /// Fraction of tokens whose predicted tag matches the reference.
    pub fn tag_accuracy(&self, sentences: &[Sentence]) -> Result<f64, NeuralError> {
        let (mut right, mut total) = (0usize, 0usize);
        for s in sentences {
            let a = match self.analyze(s) {
                Ok(a) => a,
                Err(NeuralError::LenExceeded { .. }) => {
                    total += s.tokens.len();
                    continue;
                }
                Err(e) => return Err(e),
            };
            for (p, t) in self.tags(&a).iter().zip(&s.tokens) {
                right += usize::from(*p == TagLabel::from_spoken(&t.spoken));
                total += 1;
            }
        }
        Ok(if total == 0 { 0.0 } else { right as f64 / total as f64 })
    }

    /// Joint loss of one example and its two components.
    fn example_loss(
        &self,
        g: &mut Graph<'_>,
        ex: &Example,
        dropout: &mut Dropout<'_>,
    ) -> Result<(Var, f64, Option<f64>), NeuralError> {
        let states = self.context.encode_context(g, &ex.ids, dropout)?;
        let pooled = TaggerHead::pool(g, states, &ex.spans);
        let logits = self.tag_head.logits(g, pooled);
        let tag_loss = g.cross_entropy(logits, &ex.tags, crate::train::IGNORE).ok_or(NeuralError::AllPad)?;
        let tag_value = g.value(tag_loss).item();
        if ex.nt.is_empty() {
            return Ok((tag_loss, tag_value, None));
        }
        let mut parts = Vec::with_capacity(ex.nt.len());
        for (token, chars, target) in &ex.nt {
            let span = ex.spans[*token];
            let ctx = g.mean_rows(states, span.start, span.end);
            let memory = self.verbalizer.memory(g, ctx, chars, dropout)?;
            parts.push(self.verbalizer.loss(g, memory, target, dropout)?);
        }
        let mut verb = parts[0];
        for &p in &parts[1..] {
            verb = g.add(verb, p);
        }
        let verb = g.scale(verb, 1.0 / parts.len() as f64);
        let verb_value = g.value(verb).item();
        let weighted = g.scale(verb, self.config.lambda);
        Ok((g.add(tag_loss, weighted), tag_value, Some(verb_value)))
    }

    fn example(&self, s: &Sentence) -> Example {
        let (text, spans) = s.detokenize();
        let tags = s.tokens.iter().map(|t| TagLabel::from_spoken(&t.spoken).index()).collect();
        let nt = s
            .tokens
            .iter()
            .enumerate()
            .filter_map(|(i, t)| match &t.spoken {
                SpokenForm::Words(w) => Some((
                    i,
                    token_chars(&self.char_vocab, &text, spans[i], self.config.neighbor_window),
                    w.iter().map(|w| self.word_vocab.id_or(w, crate::vocab::UNK)).collect(),
                )),
                _ => None,
            })
            .collect();
        Example { ids: char_ids(&self.char_vocab, &text), spans, tags, nt }
    }
}

pub fn train_two_stage(
    sentences: &[Sentence],
    cfg: &TwoStageConfig,
    pretrained: Option<&PretrainedEncoder>,
) -> Result<TwoStageModel, TrainError> {
    train_two_stage_with(sentences, cfg, pretrained, |_, _| true)
}

/// Trains, calling `observer(steps_done, model)` after every step; training
/// stops early when it returns false.
pub fn train_two_stage_with(
    sentences: &[Sentence],
    cfg: &TwoStageConfig,
    pretrained: Option<&PretrainedEncoder>,
    mut observer: impl FnMut(usize, &TwoStageModel) -> bool,
) -> Result<TwoStageModel, TrainError> {
    let mut cfg = cfg.clone();
    let char_vocab = match (cfg.encoder_mode.needs_pretraining(), pretrained) {
        (false, _) => {
            let texts: Vec<String> = sentences.iter().map(|s| s.detokenize().0).collect();
            char_vocab_from_texts(texts.iter().map(String::as_str))
        }
        (true, Some(p)) => {
            let arch = ModelConfig { source_vocab_size: 0, target_vocab_size: 0, ..p.config.clone() };
            let ours = ModelConfig { source_vocab_size: 0, target_vocab_size: 0, ..cfg.model.clone() };
            if arch != ours {
                warn!("using the pretrained encoder's architecture in place of the configured one");
            }
            cfg.model = ModelConfig { dropout_rate: cfg.model.dropout_rate, seed: cfg.model.seed, ..arch };
            p.vocab.clone()
        }
        (true, None) => {
            return Err(TrainError::Config(format!("encoder mode {} needs a pretrained encoder", cfg.encoder_mode.name())))
        }
    };
    cfg.model.validate()?;
    let word_vocab = word_vocab_from(sentences);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = Parameters::new();
    let (context, tag_head, verbalizer) =
        model_parts(&mut Initializer { params: &mut params, rng: &mut rng }, &cfg, char_vocab.len(), word_vocab.len())?;
    if let (true, Some(p)) = (cfg.encoder_mode.needs_pretraining(), pretrained) {
        params.copy_from(&p.params, CONTEXT_PREFIX)?;
        if cfg.encoder_mode == ContextEncoderMode::PretrainedFrozen {
            params.set_trainable_prefix(CONTEXT_PREFIX, false);
        }
    }
    let mut model = TwoStageModel {
        config: cfg.clone(),
        char_vocab,
        word_vocab,
        params,
        rng: RngState::capture(&rng),
        log: Vec::with_capacity(cfg.steps),
        skipped: 0,
        context,
        tag_head,
        verbalizer,
    };

    let mut examples = Vec::new();
    for s in sentences {
        let ex = model.example(s);
        if ex.ids.len() > cfg.model.max_len || ex.nt.iter().any(|(_, c, t)| c.len() + 1 > cfg.model.max_len || t.len() + 1 > cfg.model.max_len) {
            warn!("skipping sentence {} longer than max_len {}", s.id, cfg.model.max_len);
            model.skipped += 1;
            continue;
        }
        examples.push(ex);
    }
    if examples.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }

    let mut adam = Adam::new(&model.params, cfg.adam);
    let mut sampler = BatchSampler::new(examples.len(), cfg.batch_size);
    for step in 0..cfg.steps {
        let batch = sampler.next_batch(&mut rng);
        let mut grads = Vec::with_capacity(batch.len());
        let (mut tag_sum, mut verb_sum, mut verb_n) = (0.0, 0.0, 0usize);
        for &i in &batch {
            let mut g = Graph::new(&model.params);
            let mut drop = Dropout::new(cfg.model.dropout_rate, &mut rng);
            let (loss, tag, verb) = model.example_loss(&mut g, &examples[i], &mut drop)?;
            if !g.value(loss).item().is_finite() {
                return Err(TrainError::NonFiniteLoss { step, batch: i });
            }
            tag_sum += tag;
            if let Some(v) = verb {
                verb_sum += v;
                verb_n += 1;
            }
            grads.push(g.backward(loss));
        }
        adam.set_learning_rate(cfg.schedule.rate(cfg.adam.learning_rate, step, cfg.steps));
        apply_batch(&mut model.params, &mut adam, grads, cfg.clip);
        model.log.push(LogRecord {
            step,
            tag_loss: tag_sum / batch.len() as f64,
            verb_loss: if verb_n == 0 { 0.0 } else { verb_sum / verb_n as f64 },
            lambda: cfg.lambda,
        });
        model.rng = RngState::capture(&rng);
        if !observer(step + 1, &model) {
            break;
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::generate;
    use crate::tagger::{pretrain_masked_lm, MlmConfig};

    fn tiny(steps: usize) -> TwoStageConfig {
        TwoStageConfig {
            model: ModelConfig { d_model: 16, d_ff: 32, n_layers: 1, ..ModelConfig::default() },
            steps,
            batch_size: 2,
            seed: 7,
            ..TwoStageConfig::default()
        }
    }

    #[test]
    fn step_zero_loss_is_uniform() {
        let data = generate(6, 2);
        let cfg = TwoStageConfig { lambda: 0.5, ..tiny(1) };
        let m = train_two_stage(&data, &cfg, None).unwrap();
        let r = &m.log[0];
        assert!((r.tag_loss - 3f64.ln()).abs() < 1e-12);
        assert!((r.verb_loss - (m.word_vocab.len() as f64).ln()).abs() < 1e-12);
        assert_eq!(r.lambda, 0.5);
    }

    #[test]
    fn zero_lambda_sends_no_gradient_to_verbalizer() {
        let data = generate(4, 3);
        let cfg = TwoStageConfig { lambda: 0.0, ..tiny(1) };
        let m = train_two_stage(&data, &cfg, None).unwrap();
        let s = &data[0];
        let ex = m.example(s);
        let mut g = Graph::new(&m.params);
        let (loss, _, _) = m.example_loss(&mut g, &ex, &mut Dropout::off()).unwrap();
        let grads = g.backward(loss);
        for (id, name, _) in m.params.iter() {
            if name.starts_with("verb.") {
                if let Some(gr) = grads.get(id) {
                    assert!(gr.data().iter().all(|v| *v == 0.0), "{name}");
                }
            }
        }
        assert!(grads.iter().any(|(id, gr)| m.params.name(id).starts_with("ctx.") && gr.data().iter().any(|v| *v != 0.0)));
    }

    #[test]
    fn frozen_encoder_is_bit_identical_and_fine_tune_moves() {
        let data = generate(8, 4);
        let mlm = MlmConfig { model: tiny(1).model, steps: 2, batch_size: 2, ..MlmConfig::default() };
        let pre = pretrain_masked_lm(&data, &mlm).unwrap();
        let before = pre.params.fingerprint_prefix(CONTEXT_PREFIX);
        let frozen = TwoStageConfig { encoder_mode: ContextEncoderMode::PretrainedFrozen, ..tiny(3) };
        let m = train_two_stage(&data, &frozen, Some(&pre)).unwrap();
        assert_eq!(m.params.fingerprint_prefix(CONTEXT_PREFIX), before);
        let tune = TwoStageConfig { encoder_mode: ContextEncoderMode::PretrainedFineTune, ..tiny(3) };
        let m = train_two_stage(&data, &tune, Some(&pre)).unwrap();
        assert_ne!(m.params.fingerprint_prefix(CONTEXT_PREFIX), before);
    }

    #[test]
    fn pretrained_modes_require_a_checkpoint() {
        let cfg = TwoStageConfig { encoder_mode: ContextEncoderMode::PretrainedFrozen, ..tiny(1) };
        assert!(matches!(train_two_stage(&generate(2, 0), &cfg, None), Err(TrainError::Config(_))));
    }

    #[test]
    fn checkpoint_roundtrip_preserves_predictions() {
        let data = generate(6, 5);
        let m = train_two_stage(&data, &tiny(4), None).unwrap();
        let bytes = m.to_checkpoint().to_bytes(Default::default());
        let back = TwoStageModel::from_checkpoint(Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back.to_checkpoint().to_bytes(Default::default()), bytes);
        for s in &data {
            assert_eq!(back.tag(s).unwrap(), m.tag(s).unwrap());
        }
    }
}
