//! Masked-character pretraining of the context encoder.

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ContextEncoder;
use crate::corpus::Sentence;
use crate::neural::layers::{Dropout, Linear, ModelConfig};
use crate::neural::params::{Binder, Init, Initializer, ParamSource, Parameters};
use crate::neural::{Adam, AdamConfig, Checkpoint, Graph, NeuralError, RngState};
use crate::train::{apply_batch, BatchSampler, TrainError, IGNORE};
use crate::vocab::{char_ids, char_vocab_from_texts, CharVocab, CHAR_BOUNDARY, CHAR_MASK};

pub const CHECKPOINT_KIND: &str = "pretrained-encoder";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlmConfig {
    pub model: ModelConfig,
    pub steps: usize,
    pub batch_size: usize,
    pub mask_rate: f64,
    pub adam: AdamConfig,
    pub clip: Option<f64>,
    pub seed: u64,
}

impl Default for MlmConfig {
    fn default() -> Self {
        MlmConfig {
            model: ModelConfig::default(),
            steps: 2000,
            batch_size: 8,
            mask_rate: 0.15,
            adam: AdamConfig { learning_rate: 2e-3, ..AdamConfig::default() },
            clip: Some(1.0),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlmLogRecord {
    pub step: usize,
    pub loss: f64,
}

/// Encoder weights plus the prediction head used to train them.
#[derive(Debug, Clone)]
pub struct PretrainedEncoder {
    pub config: ModelConfig,
    pub vocab: CharVocab,
    pub params: Parameters,
    pub rng: RngState,
    pub log: Vec<MlmLogRecord>,
    encoder: ContextEncoder,
    head: Linear,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    kind: String,
    config: ModelConfig,
    vocab: CharVocab,
}

fn build(src: &mut dyn ParamSource, cfg: &ModelConfig) -> Result<(ContextEncoder, Linear), NeuralError> {
    let encoder = ContextEncoder::build(src, cfg)?;
    let head = Linear::build(src, "mlm.out", cfg.d_model, cfg.source_vocab_size, Init::FanIn(cfg.d_model))?;
    Ok((encoder, head))
}

impl PretrainedEncoder {
    pub fn encoder(&self) -> &ContextEncoder {
        &self.encoder
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = Meta { kind: CHECKPOINT_KIND.into(), config: self.config.clone(), vocab: self.vocab.clone() };
        Checkpoint { meta: serde_json::to_value(meta).expect("meta serializes"), params: self.params.clone(), rng: self.rng }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self, NeuralError> {
        let meta: Meta = serde_json::from_value(ck.meta).map_err(|e| NeuralError::Checkpoint(e.to_string()))?;
        if meta.kind != CHECKPOINT_KIND {
            return Err(NeuralError::Checkpoint(format!("expected {CHECKPOINT_KIND}, found {}", meta.kind)));
        }
        let (encoder, head) = build(&mut Binder { params: &ck.params }, &meta.config)?;
        Ok(PretrainedEncoder {
            config: meta.config,
            vocab: meta.vocab,
            params: ck.params,
            rng: ck.rng,
            log: Vec::new(),
            encoder,
            head,
        })
    }

    /// Predicted id at every position.
    fn predict(&self, ids: &[usize]) -> Result<Vec<usize>, NeuralError> {
        let mut g = Graph::new(&self.params);
        let states = self.encoder.encode_context(&mut g, ids, &mut Dropout::off())?;
        let logits = self.head.forward(&mut g, states);
        let v = g.value(logits);
        Ok((0..v.rows())
            .map(|r| {
                let row = v.row(r);
                (0..row.len()).fold(0, |b, i| if row[i] > row[b] { i } else { b })
            })
            .collect())
    }
}

/// Replaces a random subset of non-boundary positions (at least one) by the
/// mask id; returns the corrupted ids and per-position targets.
fn mask_sentence(ids: &[usize], rate: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let candidates: Vec<usize> = (0..ids.len()).filter(|&i| ids[i] != CHAR_BOUNDARY).collect();
    let mut chosen: Vec<usize> = candidates.iter().copied().filter(|_| rng.gen_bool(rate)).collect();
    if chosen.is_empty() && !candidates.is_empty() {
        chosen.push(candidates[rng.gen_range(0..candidates.len())]);
    }
    let mut input = ids.to_vec();
    let mut targets = vec![IGNORE; ids.len()];
    for i in chosen {
        targets[i] = ids[i];
        input[i] = CHAR_MASK;
    }
    (input, targets)
}

pub fn pretrain_masked_lm(sentences: &[Sentence], cfg: &MlmConfig) -> Result<PretrainedEncoder, TrainError> {
    if !(cfg.mask_rate > 0.0 && cfg.mask_rate <= 1.0) {
        return Err(TrainError::Config(format!("mask_rate {} must be in (0, 1]", cfg.mask_rate)));
    }
    let texts: Vec<String> = sentences.iter().map(|s| s.detokenize().0).collect();
    let vocab = char_vocab_from_texts(texts.iter().map(String::as_str));
    let model_cfg = ModelConfig { source_vocab_size: vocab.len(), target_vocab_size: vocab.len(), ..cfg.model.clone() };
    model_cfg.validate()?;
    let examples: Vec<Vec<usize>> = texts
        .iter()
        .map(|t| char_ids(&vocab, t))
        .filter(|ids| {
            let fits = ids.len() <= model_cfg.max_len;
            if !fits {
                warn!("skipping sentence of {} characters (max_len {})", ids.len(), model_cfg.max_len);
            }
            fits && !ids.is_empty()
        })
        .collect();
    if examples.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = Parameters::new();
    let (encoder, head) = build(&mut Initializer { params: &mut params, rng: &mut rng }, &model_cfg)?;
    let mut adam = Adam::new(&params, cfg.adam);
    let mut sampler = BatchSampler::new(examples.len(), cfg.batch_size);
    let mut log = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch = sampler.next_batch(&mut rng);
        let mut grads = Vec::with_capacity(batch.len());
        let mut loss_sum = 0.0;
        for &i in &batch {
            let (input, targets) = mask_sentence(&examples[i], cfg.mask_rate, &mut rng);
            let mut g = Graph::new(&params);
            let mut drop = Dropout::new(model_cfg.dropout_rate, &mut rng);
            let states = encoder.encode_context(&mut g, &input, &mut drop)?;
            let logits = head.forward(&mut g, states);
            let loss = g.cross_entropy(logits, &targets, IGNORE).ok_or(NeuralError::AllPad)?;
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(TrainError::NonFiniteLoss { step, batch: i });
            }
            loss_sum += value;
            grads.push(g.backward(loss));
        }
        apply_batch(&mut params, &mut adam, grads, cfg.clip);
        log.push(MlmLogRecord { step, loss: loss_sum / batch.len() as f64 });
    }

    Ok(PretrainedEncoder { config: model_cfg, vocab, params, rng: RngState::capture(&rng), log, encoder, head })
}

/// Masked-position accuracy of the model against always guessing the most
/// frequent non-boundary character of `reference` text.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlmAccuracy {
    pub masked: usize,
    pub accuracy: f64,
    pub majority_baseline: f64,
}

pub fn masked_accuracy(
    model: &PretrainedEncoder,
    sentences: &[Sentence],
    reference: &[Sentence],
    mask_rate: f64,
    seed: u64,
) -> Result<MlmAccuracy, NeuralError> {
    let mut counts = vec![0usize; model.vocab.len()];
    for s in reference {
        for id in char_ids(&model.vocab, &s.detokenize().0) {
            if id != CHAR_BOUNDARY {
                counts[id] += 1;
            }
        }
    }
    let majority = (0..counts.len()).fold(0, |b, i| if counts[i] > counts[b] { i } else { b });
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut masked, mut correct, mut baseline) = (0, 0, 0);
    for s in sentences {
        let ids = char_ids(&model.vocab, &s.detokenize().0);
        if ids.len() > model.config.max_len {
            continue;
        }
        let (input, targets) = mask_sentence(&ids, mask_rate, &mut rng);
        let predicted = model.predict(&input)?;
        for (p, t) in predicted.iter().zip(&targets).filter(|(_, t)| **t != IGNORE) {
            masked += 1;
            correct += usize::from(p == t);
            baseline += usize::from(*t == majority);
        }
    }
    let frac = |n: usize| if masked == 0 { 0.0 } else { n as f64 / masked as f64 };
    Ok(MlmAccuracy { masked, accuracy: frac(correct), majority_baseline: frac(baseline) })
}
