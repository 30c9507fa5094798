//! Single-pass sequence-to-sequence normalization over one of the four
//! source/target representations.

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{encode_source, encode_target, tokenized_source_from_words, Representation, Symbol};
use crate::corpus::Sentence;
use crate::neural::layers::{Dropout, ModelConfig, Seq2Seq};
use crate::neural::params::{Binder, Initializer, Parameters};
use crate::neural::{Adam, AdamConfig, LrSchedule, Checkpoint, Graph, NeuralError, RngState};
use crate::train::{apply_batch, BatchSampler, TrainError, IGNORE};
use crate::verbalizer::{beam_search, BeamConfig, BeamError};
use crate::vocab::{Vocab, BOS, EOS, OUTPUT_RESERVED, UNK};

pub const CHECKPOINT_KIND: &str = "single-pass";

pub type SymbolVocab = Vocab<Symbol>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinglePassConfig {
    pub model: ModelConfig,
    pub repr: Representation,
    pub steps: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub clip: Option<f64>,
    pub seed: u64,
    #[serde(default)]
    pub schedule: LrSchedule,
}

impl Default for SinglePassConfig {
    fn default() -> Self {
        SinglePassConfig {
            model: ModelConfig::default(),
            repr: Representation::TokEdits,
            steps: 3000,
            batch_size: 8,
            adam: AdamConfig { learning_rate: 2e-3, ..AdamConfig::default() },
            clip: Some(1.0),
            schedule: LrSchedule::Linear,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLoss {
    pub step: usize,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct SinglePassModel {
    pub config: SinglePassConfig,
    pub source_vocab: SymbolVocab,
    pub target_vocab: SymbolVocab,
    pub params: Parameters,
    pub rng: RngState,
    pub log: Vec<StepLoss>,
    pub skipped: usize,
    seq: Seq2Seq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SinglePassOutput {
    pub symbols: Vec<Symbol>,
    /// An unknown symbol was emitted or decoding never finished.
    pub unrecoverable: bool,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    kind: String,
    config: SinglePassConfig,
    source_vocab: SymbolVocab,
    target_vocab: SymbolVocab,
    skipped: usize,
}

/// Source symbols; without golden tokenization, tokenized sources are rebuilt
/// from a whitespace split of the detokenized text.
pub fn source_symbols(s: &Sentence, repr: Representation, golden_tokenized: bool) -> Vec<Symbol> {
    if repr.is_tokenized() && !golden_tokenized {
        let text = s.detokenize().0;
        let words: Vec<&str> = text.split_whitespace().collect();
        return tokenized_source_from_words(&words);
    }
    encode_source(s, repr)
}

fn seq_config(cfg: &SinglePassConfig, source: usize, target: usize) -> ModelConfig {
    ModelConfig { source_vocab_size: source, target_vocab_size: target, ..cfg.model.clone() }
}

impl SinglePassModel {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = Meta {
            kind: CHECKPOINT_KIND.into(),
            config: self.config.clone(),
            source_vocab: self.source_vocab.clone(),
            target_vocab: self.target_vocab.clone(),
            skipped: self.skipped,
        };
        Checkpoint { meta: serde_json::to_value(meta).expect("meta serializes"), params: self.params.clone(), rng: self.rng }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self, NeuralError> {
        let meta: Meta = serde_json::from_value(ck.meta).map_err(|e| NeuralError::Checkpoint(e.to_string()))?;
        if meta.kind != CHECKPOINT_KIND {
            return Err(NeuralError::Checkpoint(format!("expected {CHECKPOINT_KIND}, found {}", meta.kind)));
        }
        let sc = seq_config(&meta.config, meta.source_vocab.len(), meta.target_vocab.len());
        let seq = Seq2Seq::build(&mut Binder { params: &ck.params }, "sp", &sc)?;
        Ok(SinglePassModel {
            config: meta.config,
            source_vocab: meta.source_vocab,
            target_vocab: meta.target_vocab,
            params: ck.params,
            rng: ck.rng,
            log: Vec::new(),
            skipped: meta.skipped,
            seq,
        })
    }

    pub fn repr(&self) -> Representation {
        self.config.repr
    }

    fn source_ids(&self, symbols: &[Symbol]) -> Vec<usize> {
        symbols.iter().map(|s| self.source_vocab.id_or(s, UNK)).collect()
    }

    /// Beam-decodes the target symbols for `s`.
    pub fn predict(&self, s: &Sentence, golden_tokenized: bool, beam: &BeamConfig) -> Result<SinglePassOutput, NeuralError> {
        let source = self.source_ids(&source_symbols(s, self.config.repr, golden_tokenized));
        let memory = {
            let mut g = Graph::new(&self.params);
            let m = self.seq.encode(&mut g, &source, &mut Dropout::off())?;
            g.value(m).clone()
        };
        let max_len = self.config.model.max_len;
        let step = |prefix: &[usize]| -> Result<Vec<f64>, NeuralError> {
            let mut g = Graph::new(&self.params);
            let mem = g.input(memory.clone());
            let mut ids = Vec::with_capacity(prefix.len() + 1);
            ids.push(BOS);
            ids.extend_from_slice(prefix);
            let logits = self.seq.decode(&mut g, &ids, mem, &mut Dropout::off())?;
            let v = g.value(logits);
            let row = v.row(v.rows() - 1);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let log_z = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            let mut lp: Vec<f64> = row.iter().map(|x| x - log_z).collect();
            lp[BOS] = f64::NEG_INFINITY;
            Ok(lp)
        };
        let cfg = BeamConfig { max_steps: (2 * source.len() + 16).min(max_len - 1), ..*beam };
        let outcome = match beam_search(step, EOS, &cfg, None) {
            Ok(o) => o,
            Err(BeamError::Step(e)) => return Err(e),
            Err(BeamError::ZeroWidth) => return Err(NeuralError::Config("beam width must be at least 1".into())),
            Err(BeamError::EmptyBeam) => return Ok(SinglePassOutput { symbols: Vec::new(), unrecoverable: true }),
        };
        let mut unknown = false;
        let symbols = outcome
            .best
            .tokens
            .iter()
            .filter_map(|&id| {
                let sym = self.target_vocab.item(id).cloned();
                unknown |= sym.is_none();
                sym
            })
            .collect();
        Ok(SinglePassOutput { symbols, unrecoverable: unknown || outcome.max_steps_exceeded })
    }
}

pub fn train_single_pass(sentences: &[Sentence], cfg: &SinglePassConfig) -> Result<SinglePassModel, TrainError> {
    train_single_pass_with(sentences, cfg, |_, _| true)
}

/// Trains, calling `observer(steps_done, model)` after every step; training
/// stops early when it returns false.
pub fn train_single_pass_with(
    sentences: &[Sentence],
    cfg: &SinglePassConfig,
    mut observer: impl FnMut(usize, &SinglePassModel) -> bool,
) -> Result<SinglePassModel, TrainError> {
    cfg.model.validate()?;
    let pairs: Vec<(Vec<Symbol>, Vec<Symbol>)> =
        sentences.iter().map(|s| (encode_source(s, cfg.repr), encode_target(s, cfg.repr))).collect();
    let source_vocab = Vocab::new(OUTPUT_RESERVED, pairs.iter().flat_map(|(s, _)| s.iter().cloned()));
    let target_vocab = Vocab::new(OUTPUT_RESERVED, pairs.iter().flat_map(|(_, t)| t.iter().cloned()));

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = Parameters::new();
    let sc = seq_config(cfg, source_vocab.len(), target_vocab.len());
    let seq = Seq2Seq::build(&mut Initializer { params: &mut params, rng: &mut rng }, "sp", &sc)?;
    let mut model = SinglePassModel {
        config: cfg.clone(),
        source_vocab,
        target_vocab,
        params,
        rng: RngState::capture(&rng),
        log: Vec::with_capacity(cfg.steps),
        skipped: 0,
        seq,
    };

    let mut examples = Vec::new();
    for (s, (src, tgt)) in sentences.iter().zip(&pairs) {
        if src.is_empty() || src.len() > cfg.model.max_len || tgt.len() + 1 > cfg.model.max_len {
            warn!("skipping sentence {} longer than max_len {}", s.id, cfg.model.max_len);
            model.skipped += 1;
            continue;
        }
        let source: Vec<usize> = model.source_ids(src);
        let target: Vec<usize> = tgt.iter().map(|t| model.target_vocab.id_or(t, UNK)).collect();
        examples.push((source, target));
    }
    if examples.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }

    let mut adam = Adam::new(&model.params, cfg.adam);
    let mut sampler = BatchSampler::new(examples.len(), cfg.batch_size);
    for step in 0..cfg.steps {
        let batch = sampler.next_batch(&mut rng);
        let mut grads = Vec::with_capacity(batch.len());
        let mut total = 0.0;
        for &i in &batch {
            let (source, target) = &examples[i];
            let mut g = Graph::new(&model.params);
            let mut drop = Dropout::new(cfg.model.dropout_rate, &mut rng);
            let memory = model.seq.encode(&mut g, source, &mut drop)?;
            let mut prefix = vec![BOS];
            prefix.extend_from_slice(target);
            let mut gold = target.clone();
            gold.push(EOS);
            let logits = model.seq.decode(&mut g, &prefix, memory, &mut drop)?;
            let loss = g.cross_entropy(logits, &gold, IGNORE).ok_or(NeuralError::AllPad)?;
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(TrainError::NonFiniteLoss { step, batch: i });
            }
            total += value;
            grads.push(g.backward(loss));
        }
        adam.set_learning_rate(cfg.schedule.rate(cfg.adam.learning_rate, step, cfg.steps));
        apply_batch(&mut model.params, &mut adam, grads, cfg.clip);
        model.log.push(StepLoss { step, loss: total / batch.len() as f64 });
        model.rng = RngState::capture(&rng);
        if !observer(step + 1, &model) {
            break;
        }
    }
    Ok(model)
}
