//! Random toy next-token models with exhaustive and greedy oracles.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::convert::Infallible;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use textnorm::verbalizer::{beam_search, BeamConfig, Hypothesis};

pub const EOS: usize = 0;

/// Random next-id log-probabilities for every prefix of up to `steps - 1` ids.
#[derive(Debug)]
pub struct ToyModel {
    pub vocab: usize,
    pub steps: usize,
    table: BTreeMap<Vec<usize>, Vec<f64>>,
}

impl ToyModel {
    pub fn new(vocab: usize, steps: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut table = BTreeMap::new();
        let mut frontier = vec![Vec::new()];
        for _ in 0..steps {
            let mut next = Vec::new();
            for prefix in frontier {
                let logits: Vec<f64> = (0..vocab).map(|_| rng.gen_range(-3.0..3.0)).collect();
                let z = logits.iter().map(|l: &f64| l.exp()).sum::<f64>().ln();
                table.insert(prefix.clone(), logits.iter().map(|l| l - z).collect());
                for id in 1..vocab {
                    let mut p = prefix.clone();
                    p.push(id);
                    next.push(p);
                }
            }
            frontier = next;
        }
        ToyModel { vocab, steps, table }
    }

    pub fn step(&self) -> impl FnMut(&[usize]) -> Result<Vec<f64>, Infallible> + '_ {
        move |p| Ok(self.table[p].clone())
    }

    /// Every hypothesis a search of `steps` rounds can end with.
    pub fn all_hypotheses(&self) -> (Vec<Hypothesis>, Vec<Hypothesis>) {
        let (mut finished, mut open) = (Vec::new(), Vec::new());
        let mut frontier = vec![Hypothesis { tokens: Vec::new(), log_prob: 0.0, finished: false }];
        for _ in 0..self.steps {
            let mut next = Vec::new();
            for h in &frontier {
                let lp = &self.table[&h.tokens];
                finished.push(Hypothesis { tokens: h.tokens.clone(), log_prob: h.log_prob + lp[EOS], finished: true });
                for id in 1..self.vocab {
                    let mut tokens = h.tokens.clone();
                    tokens.push(id);
                    next.push(Hypothesis { tokens, log_prob: h.log_prob + lp[id], finished: false });
                }
            }
            frontier = next;
        }
        open.extend(frontier);
        (finished, open)
    }

    pub fn exhaustive_best(&self, alpha: f64) -> Hypothesis {
        let (finished, _) = self.all_hypotheses();
        finished.into_iter().max_by(|a, b| a.score(alpha).total_cmp(&b.score(alpha))).unwrap()
    }

    pub fn greedy(&self) -> Hypothesis {
        let mut tokens = Vec::new();
        let mut log_prob = 0.0;
        for _ in 0..self.steps {
            let lp = &self.table[&tokens];
            let mut best = 0;
            for id in 1..self.vocab {
                if lp[id] > lp[best] {
                    best = id;
                }
            }
            log_prob += lp[best];
            if best == EOS {
                return Hypothesis { tokens, log_prob, finished: true };
            }
            tokens.push(best);
        }
        Hypothesis { tokens, log_prob, finished: false }
    }
}

pub fn search(model: &ToyModel, width: usize, alpha: f64) -> Hypothesis {
    let cfg = BeamConfig { width, alpha, max_steps: model.steps };
    beam_search(model.step(), EOS, &cfg, None).unwrap().best
}

/// The best hypothesis when one finished within the step budget.
pub fn finished_search(model: &ToyModel, width: usize, alpha: f64) -> Option<Hypothesis> {
    Some(search(model, width, alpha)).filter(|h| h.finished)
}
