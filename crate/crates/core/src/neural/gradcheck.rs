//! Central finite-difference verification of reverse-mode gradients.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{Gradients, Graph};
use super::layers::{Activation, Dropout, ModelConfig, NormPosition, Seq2Seq};
use super::params::{Initializer, ParamId, Parameters};
use super::NeuralError;

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    pub tolerance: f64,
    /// Coordinates sampled per group; groups smaller than this are checked in full.
    pub samples_per_group: usize,
    /// Denominator floor for the relative error, so that coordinates whose
    /// true gradient is zero are judged by absolute error.
    pub floor: f64,
    pub seed: u64,
    pub worst_kept: usize,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions { epsilon: 1e-5, tolerance: 1e-4, samples_per_group: 200, floor: 1e-6, seed: 0, worst_kept: 5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateCheck {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupSummary {
    pub group: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub groups: Vec<GroupSummary>,
    /// Worst coordinates overall, descending by relative error.
    pub worst: Vec<CoordinateCheck>,
    pub max_rel_error: f64,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Groups parameters by architectural role from their names.
pub fn role_group(name: &str) -> &'static str {
    if name.contains("embed") {
        "embedding"
    } else if name.ends_with(".gain") || name.ends_with(".bias") {
        "layer_norm"
    } else if name.contains(".self.") || name.contains(".cross.") {
        "attention"
    } else if name.contains(".ff1.") || name.contains(".ff2.") {
        "feed_forward"
    } else {
        "output"
    }
}

/// Compares `analytic` against central differences of `loss` on sampled
/// trainable coordinates of each group. Fails with the worst coordinate when
/// any relative error exceeds the tolerance.
pub fn gradient_check(
    params: &Parameters,
    analytic: &Gradients,
    loss: impl Fn(&Parameters) -> Result<f64, NeuralError>,
    group_of: impl Fn(&str) -> String,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport, NeuralError> {
    let mut coords: BTreeMap<String, Vec<(ParamId, usize)>> = BTreeMap::new();
    for (id, name, value) in params.iter() {
        if params.is_trainable(id) {
            let group = coords.entry(group_of(name)).or_default();
            group.extend((0..value.len()).map(|i| (id, i)));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work = params.clone();
    let mut groups = Vec::new();
    let mut all = Vec::new();
    for (group, members) in coords {
        let picked: Vec<(ParamId, usize)> = if members.len() <= opts.samples_per_group {
            members
        } else {
            let mut idx = sample(&mut rng, members.len(), opts.samples_per_group).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| members[i]).collect()
        };
        let mut max_rel = 0.0f64;
        for &(id, i) in &picked {
            let original = work.value(id).data()[i];
            work.value_mut(id).data_mut()[i] = original + opts.epsilon;
            let plus = loss(&work)?;
            work.value_mut(id).data_mut()[i] = original - opts.epsilon;
            let minus = loss(&work)?;
            work.value_mut(id).data_mut()[i] = original;
            let numeric = (plus - minus) / (2.0 * opts.epsilon);
            let a = analytic.get(id).map_or(0.0, |g| g.data()[i]);
            let rel_error = relative_error(a, numeric, opts.floor);
            if !rel_error.is_finite() {
                return Err(NeuralError::NonFinite(format!("gradient check of {}", params.name(id))));
            }
            max_rel = max_rel.max(rel_error);
            all.push(CoordinateCheck { param: params.name(id).to_string(), index: i, analytic: a, numeric, rel_error });
        }
        groups.push(GroupSummary { group, checked: picked.len(), max_rel_error: max_rel });
    }

    all.sort_by(|a, b| b.rel_error.total_cmp(&a.rel_error));
    let checked = all.len();
    let max_rel_error = all.first().map_or(0.0, |c| c.rel_error);
    if let Some(w) = all.first().filter(|w| w.rel_error > opts.tolerance) {
        return Err(NeuralError::CheckFailed {
            param: w.param.clone(),
            index: w.index,
            analytic: w.analytic,
            numeric: w.numeric,
            rel_error: w.rel_error,
        });
    }
    all.truncate(opts.worst_kept);
    Ok(GradCheckReport { groups, worst: all, max_rel_error, checked })
}

/// Small encoder-decoder used to exercise every layer type under gradient check.
#[derive(Debug, Clone)]
pub struct Seq2SeqCheck {
    pub model: ModelConfig,
    pub source_len: usize,
    pub target_len: usize,
    /// Half-width of the uniform noise added to every parameter, so that
    /// zero-initialized heads and unit norm gains are checked away from
    /// their special values.
    pub perturbation: f64,
}

impl Default for Seq2SeqCheck {
    fn default() -> Self {
        Seq2SeqCheck {
            model: ModelConfig {
                d_model: 32,
                n_heads: 2,
                n_layers: 2,
                d_ff: 64,
                max_len: 32,
                source_vocab_size: 7,
                target_vocab_size: 7,
                dropout_rate: 0.0,
                seed: 0,
                activation: Activation::Gelu,
                norm: NormPosition::Pre,
            },
            source_len: 6,
            target_len: 6,
            perturbation: 0.3,
        }
    }
}

/// Builds the model described by `setup`, draws a random source/target
/// pair from `opts.seed`, and checks the cross-entropy gradient by role.
pub fn check_seq2seq(setup: &Seq2SeqCheck, opts: &GradCheckOptions) -> Result<GradCheckReport, NeuralError> {
    let cfg = &setup.model;
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut params = Parameters::new();
    let seq = Seq2Seq::build(&mut Initializer { params: &mut params, rng: &mut rng }, "s2s", cfg)?;
    let ids: Vec<ParamId> = params.ids().collect();
    for id in ids {
        for v in params.value_mut(id).data_mut() {
            *v += rng.gen_range(-setup.perturbation..setup.perturbation);
        }
    }
    let source: Vec<usize> = (0..setup.source_len).map(|_| rng.gen_range(0..cfg.source_vocab_size)).collect();
    let target: Vec<usize> = (0..setup.target_len).map(|_| rng.gen_range(0..cfg.target_vocab_size)).collect();
    let prefix: Vec<usize> = std::iter::once(0).chain(target[..target.len() - 1].iter().copied()).collect();

    let forward = |p: &Parameters| -> Result<(f64, Gradients), NeuralError> {
        let mut g = Graph::new(p);
        let memory = seq.encode(&mut g, &source, &mut Dropout::off())?;
        let logits = seq.decode(&mut g, &prefix, memory, &mut Dropout::off())?;
        let loss = g.cross_entropy(logits, &target, usize::MAX).ok_or(NeuralError::AllPad)?;
        Ok((g.value(loss).item(), g.backward(loss)))
    };
    let (_, grads) = forward(&params)?;
    gradient_check(&params, &grads, |p| forward(p).map(|(l, _)| l), |n| role_group(n).to_string(), opts)
}
