//! Beam search over a next-token log-probability function.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamConfig {
    pub width: usize,
    /// Exponent of the length normalization applied at final ranking.
    pub alpha: f64,
    pub max_steps: usize,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig { width: 4, alpha: 0.6, max_steps: 16 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Emitted ids, without the end marker.
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub finished: bool,
}

impl Hypothesis {
    /// Length-normalized score; the end marker counts toward length.
    pub fn score(&self, alpha: f64) -> f64 {
        let len = self.tokens.len() + usize::from(self.finished);
        if len == 0 {
            return self.log_prob;
        }
        self.log_prob / (len as f64).powf(alpha)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamOutcome {
    pub best: Hypothesis,
    /// True when no hypothesis finished within `max_steps`.
    pub max_steps_exceeded: bool,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum BeamError<E> {
    #[error("beam width must be at least 1")]
    ZeroWidth,
    #[error("every hypothesis was pruned")]
    EmptyBeam,
    #[error(transparent)]
    Step(E),
}

/// Prefix tree of permitted id sequences; the end marker is legal exactly
/// at nodes where a sequence terminates.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trie {
    children: BTreeMap<usize, Trie>,
    terminal: bool,
}

impl Trie {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, seq: &[usize]) {
        let mut node = self;
        for &id in seq {
            node = node.children.entry(id).or_default();
        }
        node.terminal = true;
    }

    pub fn node(&self, prefix: &[usize]) -> Option<&Trie> {
        let mut node = self;
        for id in prefix {
            node = node.children.get(id)?;
        }
        Some(node)
    }

    pub fn contains(&self, seq: &[usize]) -> bool {
        self.node(seq).is_some_and(|n| n.terminal)
    }

    pub fn is_empty(&self) -> bool {
        self.children.is_empty() && !self.terminal
    }
}

/// Runs beam search. `step(prefix)` returns log-probabilities over the
/// vocabulary for the next id; `-inf` entries are never extended.
///
/// Each round expands every live hypothesis, keeps the `width` best
/// candidates by cumulative log-probability (finished ones included), and
/// stops when none remain live. Ties prefer the earlier hypothesis and then
/// the lower id. Finished hypotheses are ranked by [`Hypothesis::score`].
pub fn beam_search<E>(
    mut step: impl FnMut(&[usize]) -> Result<Vec<f64>, E>,
    eos: usize,
    cfg: &BeamConfig,
    constraint: Option<&Trie>,
) -> Result<BeamOutcome, BeamError<E>> {
    if cfg.width == 0 {
        return Err(BeamError::ZeroWidth);
    }
    let mut live = vec![Hypothesis { tokens: Vec::new(), log_prob: 0.0, finished: false }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for _ in 0..cfg.max_steps {
        let mut candidates: Vec<Hypothesis> = Vec::new();
        for hyp in &live {
            let logp = step(&hyp.tokens).map_err(BeamError::Step)?;
            let node = match constraint {
                Some(trie) => match trie.node(&hyp.tokens) {
                    Some(n) => Some(n),
                    None => continue,
                },
                None => None,
            };
            for (id, &lp) in logp.iter().enumerate() {
                if lp == f64::NEG_INFINITY || lp.is_nan() {
                    continue;
                }
                let allowed = match node {
                    Some(n) if id == eos => n.terminal,
                    Some(n) => n.children.contains_key(&id),
                    None => true,
                };
                if !allowed {
                    continue;
                }
                let mut tokens = hyp.tokens.clone();
                let done = id == eos;
                if !done {
                    tokens.push(id);
                }
                candidates.push(Hypothesis { tokens, log_prob: hyp.log_prob + lp, finished: done });
            }
        }
        // Stable sort keeps expansion order (hypothesis, then id) among ties.
        candidates.sort_by(|a, b| b.log_prob.total_cmp(&a.log_prob));
        candidates.truncate(cfg.width);
        live.clear();
        for c in candidates {
            if c.finished {
                finished.push(c);
            } else {
                live.push(c);
            }
        }
        if live.is_empty() {
            break;
        }
    }

    let rank = |pool: &[Hypothesis]| -> Option<Hypothesis> {
        let mut best: Option<&Hypothesis> = None;
        for h in pool {
            if best.is_none_or(|b| h.score(cfg.alpha) > b.score(cfg.alpha)) {
                best = Some(h);
            }
        }
        best.cloned()
    };
    if let Some(best) = rank(&finished) {
        return Ok(BeamOutcome { best, max_steps_exceeded: false });
    }
    match rank(&live) {
        Some(best) => Ok(BeamOutcome { best, max_steps_exceeded: true }),
        None => Err(BeamError::EmptyBeam),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::convert::Infallible;

    const EOS: usize = 0;

    /// Next-id distribution as a function of the prefix.
    fn table_step(f: impl Fn(&[usize]) -> Vec<f64>) -> impl FnMut(&[usize]) -> Result<Vec<f64>, Infallible> {
        move |p| Ok(f(p).into_iter().map(f64::ln).collect())
    }

    fn greedy_trap(prefix: &[usize]) -> Vec<f64> {
        // ids: 0 = end, 1 = a, 2 = b
        match prefix {
            [] => vec![0.0, 0.6, 0.4],
            [1] => vec![0.1, 0.45, 0.45],
            [2] => vec![0.9, 0.05, 0.05],
            _ => vec![0.5, 0.25, 0.25],
        }
    }

    #[test]
    fn width_one_is_greedy_and_width_two_escapes() {
        let cfg = BeamConfig { width: 1, alpha: 0.0, max_steps: 3 };
        let greedy = beam_search(table_step(greedy_trap), EOS, &cfg, None).unwrap();
        assert_eq!(greedy.best.tokens[0], 1);
        let cfg = BeamConfig { width: 2, ..cfg };
        let wide = beam_search(table_step(greedy_trap), EOS, &cfg, None).unwrap();
        assert_eq!(wide.best.tokens, vec![2]);
        assert!((wide.best.log_prob - 0.36f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn trie_forces_the_only_sequence() {
        let mut trie = Trie::new();
        trie.insert(&[2, 2, 1]);
        let out = beam_search(table_step(greedy_trap), EOS, &BeamConfig::default(), Some(&trie)).unwrap();
        assert_eq!(out.best.tokens, vec![2, 2, 1]);
        assert!(out.best.finished);
    }

    #[test]
    fn pruned_beam_is_an_error() {
        let mut trie = Trie::new();
        trie.insert(&[7]);
        let r = beam_search(table_step(greedy_trap), EOS, &BeamConfig::default(), Some(&trie));
        assert_eq!(r, Err(BeamError::EmptyBeam));
    }

    #[test]
    fn step_limit_returns_flagged_partial() {
        let never_end = |_: &[usize]| vec![0.0, 1.0];
        let cfg = BeamConfig { width: 2, alpha: 0.6, max_steps: 3 };
        let out = beam_search(table_step(never_end), EOS, &cfg, None).unwrap();
        assert!(out.max_steps_exceeded);
        assert_eq!(out.best.tokens, vec![1, 1, 1]);
        assert!(!out.best.finished);
    }

    #[test]
    fn zero_width_rejected() {
        let cfg = BeamConfig { width: 0, ..BeamConfig::default() };
        assert_eq!(beam_search(table_step(greedy_trap), EOS, &cfg, None), Err(BeamError::ZeroWidth));
    }

    #[test]
    fn length_normalization_counts_the_end_marker() {
        let h = Hypothesis { tokens: vec![3, 4, 5], log_prob: -2.0, finished: true };
        assert!((h.score(0.5) - -1.0).abs() < 1e-15);
    }
}
