//! Pieces shared by every training loop: errors, batching, clipping, logs.

use std::io::{self, Write};

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::neural::{Adam, Gradients, NeuralError, Parameters};

/// Target id excluded from cross-entropy.
pub const IGNORE: usize = usize::MAX;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("non-finite loss at step {step} (batch {batch})")]
    NonFiniteLoss { step: usize, batch: usize },
    #[error("no usable training examples")]
    EmptyCorpus,
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Neural(#[from] NeuralError),
}

/// Epoch-wise shuffled batches drawn from a seeded stream.
pub struct BatchSampler {
    order: Vec<usize>,
    at: usize,
    batch_size: usize,
}

impl BatchSampler {
    pub fn new(len: usize, batch_size: usize) -> Self {
        BatchSampler { order: (0..len).collect(), at: len, batch_size: batch_size.max(1) }
    }

    pub fn next_batch(&mut self, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut batch = Vec::with_capacity(self.batch_size);
        while batch.len() < self.batch_size.min(self.order.len()) {
            if self.at == self.order.len() {
                self.order.shuffle(rng);
                self.at = 0;
            }
            batch.push(self.order[self.at]);
            self.at += 1;
        }
        batch
    }
}

/// Rescales `grads` so their global norm is at most `max_norm`.
pub fn clip_global_norm(grads: &mut Gradients, max_norm: f64) {
    let norm = grads.global_norm();
    if norm > max_norm && norm.is_finite() {
        grads.scale(max_norm / norm);
    }
}

/// Averages per-example gradients in batch order, clips, and updates.
pub fn apply_batch(
    params: &mut Parameters,
    adam: &mut Adam,
    per_example: Vec<Gradients>,
    clip: Option<f64>,
) {
    let n = per_example.len();
    let mut total = Gradients::empty(params);
    for g in &per_example {
        total.accumulate(g);
    }
    if n > 1 {
        total.scale(1.0 / n as f64);
    }
    if let Some(max) = clip {
        clip_global_norm(&mut total, max);
    }
    adam.step(params, &total);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    pub tag_loss: f64,
    pub verb_loss: f64,
    pub lambda: f64,
}

pub fn write_log<W: Write>(mut out: W, log: &[LogRecord]) -> io::Result<()> {
    for r in log {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn batches_cover_each_epoch_once() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = BatchSampler::new(7, 3);
        let mut seen: Vec<usize> = (0..7).flat_map(|_| s.next_batch(&mut rng)).take(21).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..7).flat_map(|i| [i, i, i]).collect::<Vec<_>>());
    }

    #[test]
    fn small_corpus_caps_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(BatchSampler::new(2, 8).next_batch(&mut rng).len(), 2);
    }
}
