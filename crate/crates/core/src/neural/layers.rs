//! Transformer building blocks expressed over [`Graph`].

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use super::array::Array;
use super::graph::{Graph, Mask, Var};
use super::params::{Init, ParamId, ParamSource};
use super::NeuralError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Gelu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormPosition {
    /// `x + f(norm(x))`, with a final norm after the stack.
    Pre,
    /// `norm(x + f(x))`.
    Post,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub source_vocab_size: usize,
    pub target_vocab_size: usize,
    pub dropout_rate: f64,
    pub seed: u64,
    pub activation: Activation,
    pub norm: NormPosition,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            n_heads: 2,
            n_layers: 2,
            d_ff: 128,
            max_len: 256,
            source_vocab_size: 0,
            target_vocab_size: 0,
            dropout_rate: 0.0,
            seed: 0,
            activation: Activation::Relu,
            norm: NormPosition::Pre,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), NeuralError> {
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(NeuralError::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(NeuralError::Config(format!("dropout rate {} outside [0, 1)", self.dropout_rate)));
        }
        Ok(())
    }
}

/// Standard sine/cosine position table, `[len, d_model]`.
pub fn sinusoidal_positions(len: usize, d_model: usize, max_len: usize) -> Result<Array, NeuralError> {
    if len > max_len {
        return Err(NeuralError::LenExceeded { len, max: max_len });
    }
    let mut out = Array::zeros(&[len, d_model]);
    for pos in 0..len {
        let row = out.row_mut(pos);
        for i in 0..d_model {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / d_model as f64);
            row[i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn build(src: &mut dyn ParamSource, name: &str, d_in: usize, d_out: usize, init: Init) -> Result<Self, NeuralError> {
        Ok(Linear {
            weight: src.param(&format!("{name}.w"), &[d_in, d_out], init)?,
            bias: src.param(&format!("{name}.b"), &[d_out], Init::Zeros)?,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let y = g.matmul(x, w);
        g.add_row(y, b)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn build(src: &mut dyn ParamSource, name: &str, d: usize) -> Result<Self, NeuralError> {
        Ok(LayerNorm {
            gain: src.param(&format!("{name}.gain"), &[d], Init::Ones)?,
            bias: src.param(&format!("{name}.bias"), &[d], Init::Zeros)?,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let gain = g.param(self.gain);
        let bias = g.param(self.bias);
        g.layer_norm(x, gain, bias)
    }
}

/// Attention over already projected queries, keys and values, split into
/// `n_heads` column blocks. Returns the merged output and per-head weights.
pub fn multi_head_attention(
    g: &mut Graph<'_>,
    q: Var,
    k: Var,
    v: Var,
    n_heads: usize,
    mask: Option<Rc<Mask>>,
) -> Result<(Var, Vec<Var>), NeuralError> {
    let (qs, ks, vs) = (g.value(q).shape().to_vec(), g.value(k).shape().to_vec(), g.value(v).shape().to_vec());
    let d = qs[qs.len() - 1];
    if ks[ks.len() - 1] != d || g.value(k).rows() != g.value(v).rows() || n_heads == 0 || d % n_heads != 0 {
        return Err(NeuralError::ShapeMismatch(format!("attention q {qs:?} k {ks:?} v {vs:?} heads {n_heads}")));
    }
    if let Some(m) = &mask {
        if m.shape() != (g.value(q).rows(), g.value(k).rows()) {
            return Err(NeuralError::ShapeMismatch(format!("mask {:?} for q {qs:?} k {ks:?}", m.shape())));
        }
    }
    let dk = d / n_heads;
    let dv = g.value(v).cols() / n_heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut heads = Vec::with_capacity(n_heads);
    let mut weights = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let qh = if n_heads == 1 { q } else { g.slice_cols(q, h * dk, (h + 1) * dk) };
        let kh = if n_heads == 1 { k } else { g.slice_cols(k, h * dk, (h + 1) * dk) };
        let vh = if n_heads == 1 { v } else { g.slice_cols(v, h * dv, (h + 1) * dv) };
        let scores = g.matmul_t(qh, kh);
        let scores = g.scale(scores, scale);
        let w = g.softmax(scores, mask.clone());
        weights.push(w);
        heads.push(g.matmul(w, vh));
    }
    let out = if n_heads == 1 { heads[0] } else { g.concat_cols(&heads) };
    Ok((out, weights))
}

#[derive(Debug, Clone)]
pub struct Attention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub n_heads: usize,
}

impl Attention {
    pub fn build(src: &mut dyn ParamSource, name: &str, cfg: &ModelConfig) -> Result<Self, NeuralError> {
        let d = cfg.d_model;
        Ok(Attention {
            query: Linear::build(src, &format!("{name}.q"), d, d, Init::FanIn(d))?,
            key: Linear::build(src, &format!("{name}.k"), d, d, Init::FanIn(d))?,
            value: Linear::build(src, &format!("{name}.v"), d, d, Init::FanIn(d))?,
            output: Linear::build(src, &format!("{name}.o"), d, d, Init::FanIn(d))?,
            n_heads: cfg.n_heads,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var, memory: Var, mask: Option<Rc<Mask>>) -> Result<Var, NeuralError> {
        let q = self.query.forward(g, x);
        let k = self.key.forward(g, memory);
        let v = self.value.forward(g, memory);
        let (merged, _) = multi_head_attention(g, q, k, v, self.n_heads, mask)?;
        Ok(self.output.forward(g, merged))
    }
}

#[derive(Debug, Clone)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
    pub activation: Activation,
}

impl FeedForward {
    pub fn build(src: &mut dyn ParamSource, name: &str, cfg: &ModelConfig) -> Result<Self, NeuralError> {
        Ok(FeedForward {
            inner: Linear::build(src, &format!("{name}.ff1"), cfg.d_model, cfg.d_ff, Init::FanIn(cfg.d_model))?,
            outer: Linear::build(src, &format!("{name}.ff2"), cfg.d_ff, cfg.d_model, Init::FanIn(cfg.d_ff))?,
            activation: cfg.activation,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let h = self.inner.forward(g, x);
        let h = match self.activation {
            Activation::Relu => g.relu(h),
            Activation::Gelu => g.gelu(h),
        };
        self.outer.forward(g, h)
    }
}

/// Residual wrapper honoring the configured norm position.
fn residual(
    g: &mut Graph<'_>,
    x: Var,
    norm: &LayerNorm,
    position: NormPosition,
    f: impl FnOnce(&mut Graph<'_>, Var) -> Result<Var, NeuralError>,
) -> Result<Var, NeuralError> {
    match position {
        NormPosition::Pre => {
            let h = norm.forward(g, x);
            let h = f(g, h)?;
            Ok(g.add(x, h))
        }
        NormPosition::Post => {
            let h = f(g, x)?;
            let s = g.add(x, h);
            Ok(norm.forward(g, s))
        }
    }
}

#[derive(Debug, Clone)]
pub struct EncoderLayer {
    norm_attn: LayerNorm,
    attn: Attention,
    norm_ff: LayerNorm,
    ff: FeedForward,
}

#[derive(Debug, Clone)]
pub struct EncoderStack {
    layers: Vec<EncoderLayer>,
    final_norm: Option<LayerNorm>,
    norm: NormPosition,
}

impl EncoderStack {
    pub fn build(src: &mut dyn ParamSource, name: &str, cfg: &ModelConfig) -> Result<Self, NeuralError> {
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for i in 0..cfg.n_layers {
            let p = format!("{name}.{i}");
            layers.push(EncoderLayer {
                norm_attn: LayerNorm::build(src, &format!("{p}.ln1"), cfg.d_model)?,
                attn: Attention::build(src, &format!("{p}.self"), cfg)?,
                norm_ff: LayerNorm::build(src, &format!("{p}.ln2"), cfg.d_model)?,
                ff: FeedForward::build(src, &p.to_string(), cfg)?,
            });
        }
        let final_norm = if cfg.norm == NormPosition::Pre && cfg.n_layers > 0 {
            Some(LayerNorm::build(src, &format!("{name}.final"), cfg.d_model)?)
        } else {
            None
        };
        Ok(EncoderStack { layers, final_norm, norm: cfg.norm })
    }

    /// Bidirectional self-attention stack over `x` (`[len, d_model]`).
    pub fn forward(&self, g: &mut Graph<'_>, x: Var, dropout: &mut Dropout<'_>) -> Result<Var, NeuralError> {
        let mut h = x;
        for layer in &self.layers {
            h = residual(g, h, &layer.norm_attn, self.norm, |g, y| {
                let a = layer.attn.forward(g, y, y, None)?;
                Ok(dropout.apply(g, a))
            })?;
            h = residual(g, h, &layer.norm_ff, self.norm, |g, y| {
                let f = layer.ff.forward(g, y);
                Ok(dropout.apply(g, f))
            })?;
        }
        Ok(match &self.final_norm {
            Some(norm) => norm.forward(g, h),
            None => h,
        })
    }
}

#[derive(Debug, Clone)]
pub struct DecoderLayer {
    norm_self: LayerNorm,
    self_attn: Attention,
    norm_cross: LayerNorm,
    cross_attn: Attention,
    norm_ff: LayerNorm,
    ff: FeedForward,
}

#[derive(Debug, Clone)]
pub struct DecoderStack {
    layers: Vec<DecoderLayer>,
    final_norm: Option<LayerNorm>,
    norm: NormPosition,
}

impl DecoderStack {
    pub fn build(src: &mut dyn ParamSource, name: &str, cfg: &ModelConfig) -> Result<Self, NeuralError> {
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for i in 0..cfg.n_layers {
            let p = format!("{name}.{i}");
            layers.push(DecoderLayer {
                norm_self: LayerNorm::build(src, &format!("{p}.ln1"), cfg.d_model)?,
                self_attn: Attention::build(src, &format!("{p}.self"), cfg)?,
                norm_cross: LayerNorm::build(src, &format!("{p}.ln2"), cfg.d_model)?,
                cross_attn: Attention::build(src, &format!("{p}.cross"), cfg)?,
                norm_ff: LayerNorm::build(src, &format!("{p}.ln3"), cfg.d_model)?,
                ff: FeedForward::build(src, &p.to_string(), cfg)?,
            });
        }
        let final_norm = if cfg.norm == NormPosition::Pre && cfg.n_layers > 0 {
            Some(LayerNorm::build(src, &format!("{name}.final"), cfg.d_model)?)
        } else {
            None
        };
        Ok(DecoderStack { layers, final_norm, norm: cfg.norm })
    }

    /// Causal self-attention plus attention over `memory`.
    pub fn forward(&self, g: &mut Graph<'_>, x: Var, memory: Var, dropout: &mut Dropout<'_>) -> Result<Var, NeuralError> {
        let len = g.value(x).rows();
        let causal = Rc::new(Mask::causal(len));
        let mut h = x;
        for layer in &self.layers {
            h = residual(g, h, &layer.norm_self, self.norm, |g, y| {
                let a = layer.self_attn.forward(g, y, y, Some(causal.clone()))?;
                Ok(dropout.apply(g, a))
            })?;
            h = residual(g, h, &layer.norm_cross, self.norm, |g, y| {
                let a = layer.cross_attn.forward(g, y, memory, None)?;
                Ok(dropout.apply(g, a))
            })?;
            h = residual(g, h, &layer.norm_ff, self.norm, |g, y| {
                let f = layer.ff.forward(g, y);
                Ok(dropout.apply(g, f))
            })?;
        }
        Ok(match &self.final_norm {
            Some(norm) => norm.forward(g, h),
            None => h,
        })
    }
}

/// Dropout source threaded through a forward pass; inactive at inference.
pub struct Dropout<'r> {
    rate: f64,
    rng: Option<&'r mut rand_chacha::ChaCha8Rng>,
}

impl<'r> Dropout<'r> {
    pub fn off() -> Self {
        Dropout { rate: 0.0, rng: None }
    }

    pub fn new(rate: f64, rng: &'r mut rand_chacha::ChaCha8Rng) -> Self {
        Dropout { rate, rng: Some(rng) }
    }

    pub fn apply(&mut self, g: &mut Graph<'_>, x: Var) -> Var {
        match self.rng.as_deref_mut() {
            Some(rng) if self.rate > 0.0 => g.dropout(x, self.rate, rng),
            _ => x,
        }
    }
}

/// Token embedding plus sinusoidal positions.
#[derive(Debug, Clone)]
pub struct Embedding {
    pub table: ParamId,
    pub vocab: usize,
    pub d_model: usize,
    pub max_len: usize,
}

impl Embedding {
    pub fn build(src: &mut dyn ParamSource, name: &str, vocab: usize, cfg: &ModelConfig) -> Result<Self, NeuralError> {
        Ok(Embedding {
            table: src.param(name, &[vocab, cfg.d_model], Init::FanIn(1))?,
            vocab,
            d_model: cfg.d_model,
            max_len: cfg.max_len,
        })
    }

    pub fn lookup(&self, g: &mut Graph<'_>, ids: &[usize]) -> Result<Var, NeuralError> {
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.vocab) {
            return Err(NeuralError::VocabOverflow { id: bad, size: self.vocab });
        }
        let table = g.param(self.table);
        Ok(g.gather(table, ids))
    }

    pub fn add_positions(&self, g: &mut Graph<'_>, x: Var) -> Result<Var, NeuralError> {
        let len = g.value(x).rows();
        let pe = g.input(sinusoidal_positions(len, self.d_model, self.max_len)?);
        Ok(g.add(x, pe))
    }

    pub fn forward(&self, g: &mut Graph<'_>, ids: &[usize]) -> Result<Var, NeuralError> {
        let x = self.lookup(g, ids)?;
        self.add_positions(g, x)
    }
}

/// Encoder over a symbol sequence: embedding, positions, stack.
#[derive(Debug, Clone)]
pub struct TransformerEncoder {
    pub embedding: Embedding,
    pub stack: EncoderStack,
}

impl TransformerEncoder {
    pub fn build(src: &mut dyn ParamSource, name: &str, vocab: usize, cfg: &ModelConfig) -> Result<Self, NeuralError> {
        Ok(TransformerEncoder {
            embedding: Embedding::build(src, &format!("{name}.embed"), vocab, cfg)?,
            stack: EncoderStack::build(src, &format!("{name}.layers"), cfg)?,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, ids: &[usize], dropout: &mut Dropout<'_>) -> Result<Var, NeuralError> {
        let x = self.embedding.forward(g, ids)?;
        let x = dropout.apply(g, x);
        self.stack.forward(g, x, dropout)
    }
}

/// Encoder-decoder with a target embedding and output projection.
#[derive(Debug, Clone)]
pub struct Seq2Seq {
    pub source: Embedding,
    pub encoder: EncoderStack,
    pub target: Embedding,
    pub decoder: DecoderStack,
    pub output: Linear,
}

impl Seq2Seq {
    pub fn build(src: &mut dyn ParamSource, name: &str, cfg: &ModelConfig) -> Result<Self, NeuralError> {
        Ok(Seq2Seq {
            source: Embedding::build(src, &format!("{name}.src_embed"), cfg.source_vocab_size, cfg)?,
            encoder: EncoderStack::build(src, &format!("{name}.enc"), cfg)?,
            target: Embedding::build(src, &format!("{name}.tgt_embed"), cfg.target_vocab_size, cfg)?,
            decoder: DecoderStack::build(src, &format!("{name}.dec"), cfg)?,
            output: Linear::build(src, &format!("{name}.out"), cfg.d_model, cfg.target_vocab_size, Init::Zeros)?,
        })
    }

    /// Encodes rows that are already embedded (positions are added here).
    pub fn encode_rows(&self, g: &mut Graph<'_>, rows: Var, dropout: &mut Dropout<'_>) -> Result<Var, NeuralError> {
        let x = self.source.add_positions(g, rows)?;
        let x = dropout.apply(g, x);
        self.encoder.forward(g, x, dropout)
    }

    pub fn encode(&self, g: &mut Graph<'_>, ids: &[usize], dropout: &mut Dropout<'_>) -> Result<Var, NeuralError> {
        let rows = self.source.lookup(g, ids)?;
        self.encode_rows(g, rows, dropout)
    }

    /// Logits `[prefix_len, target_vocab]` for next-symbol prediction.
    pub fn decode(&self, g: &mut Graph<'_>, prefix: &[usize], memory: Var, dropout: &mut Dropout<'_>) -> Result<Var, NeuralError> {
        let x = self.target.forward(g, prefix)?;
        let x = dropout.apply(g, x);
        let h = self.decoder.forward(g, x, memory, dropout)?;
        Ok(self.output.forward(g, h))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::params::{Initializer, Parameters};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn positions_at_zero_alternate() {
        let pe = sinusoidal_positions(3, 6, 10).unwrap();
        assert_eq!(pe.row(0), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn position_spot_value() {
        let pe = sinusoidal_positions(2, 4, 10).unwrap();
        assert!((pe.get(1, 0) - 0.841_471).abs() < 1e-6);
        // dim 2 pairs with frequency 1/10000^(2/4) = 0.01
        assert!((pe.get(1, 2) - 0.01f64.sin()).abs() < 1e-15);
    }

    #[test]
    fn positions_are_bounded_and_checked() {
        let pe = sinusoidal_positions(50, 17, 64).unwrap();
        assert!(pe.data().iter().all(|v| v.abs() <= 1.0));
        assert!(matches!(sinusoidal_positions(65, 4, 64), Err(NeuralError::LenExceeded { len: 65, max: 64 })));
    }

    #[test]
    fn single_key_attention_returns_its_value() {
        let params = Parameters::new();
        let mut g = Graph::new(&params);
        let q = g.input(Array::from_rows(&[vec![0.3, -1.2, 0.5, 2.0]]));
        let k = g.input(Array::from_rows(&[vec![1.0, 1.0, -1.0, 0.2]]));
        let v = g.input(Array::from_rows(&[vec![4.0, 5.0, 6.0, 7.0]]));
        let (out, w) = multi_head_attention(&mut g, q, k, v, 2, None).unwrap();
        assert_eq!(g.value(out).data(), &[4.0, 5.0, 6.0, 7.0]);
        assert_eq!(g.value(w[0]).data(), &[1.0]);
    }

    #[test]
    fn masked_keys_get_no_weight() {
        let params = Parameters::new();
        let mut g = Graph::new(&params);
        let q = g.input(Array::from_rows(&[vec![1.0, 2.0]]));
        let k = g.input(Array::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![3.0, 3.0]]));
        let v = g.input(Array::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]));
        let mask = Rc::new(Mask::new(1, 3, vec![false, true, false]));
        let (out, w) = multi_head_attention(&mut g, q, k, v, 1, Some(mask)).unwrap();
        assert_eq!(g.value(out).data(), &[3.0, 4.0]);
        assert_eq!(g.value(w[0]).data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn two_key_weights_are_softmax_of_scaled_scores() {
        let params = Parameters::new();
        let mut g = Graph::new(&params);
        let q = g.input(Array::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0]]));
        let k = g.input(Array::from_rows(&[vec![1.0, 1.0], vec![2.0, -1.0]]));
        let v = g.input(Array::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]));
        let (out, w) = multi_head_attention(&mut g, q, k, v, 1, None).unwrap();
        // Row 0 scores: (1, 2)/sqrt2; row 1 scores: (2, -2)/sqrt2.
        let soft = |a: f64, b: f64| {
            let (ea, eb) = (a.exp(), b.exp());
            (ea / (ea + eb), eb / (ea + eb))
        };
        let r2 = 2f64.sqrt();
        let (a0, b0) = soft(1.0 / r2, 2.0 / r2);
        let (a1, b1) = soft(2.0 / r2, -2.0 / r2);
        let weights = g.value(w[0]);
        for (got, want) in weights.data().iter().zip([a0, b0, a1, b1]) {
            assert!((got - want).abs() < 1e-15);
        }
        // Frozen: softmax([0.70711, 1.41421]) = [0.33024, 0.66976].
        assert!((weights.get(0, 0) - 0.330_238).abs() < 1e-6);
        assert_eq!(g.value(out).data(), weights.data());
    }

    #[test]
    fn attention_rejects_bad_shapes() {
        let params = Parameters::new();
        let mut g = Graph::new(&params);
        let q = g.input(Array::zeros(&[2, 4]));
        let k = g.input(Array::zeros(&[3, 3]));
        let v = g.input(Array::zeros(&[3, 4]));
        assert!(matches!(multi_head_attention(&mut g, q, k, v, 2, None), Err(NeuralError::ShapeMismatch(_))));
    }

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            d_model: 8,
            n_heads: 2,
            n_layers: 2,
            d_ff: 16,
            max_len: 16,
            source_vocab_size: 7,
            target_vocab_size: 6,
            ..ModelConfig::default()
        }
    }

    fn tiny_model(cfg: &ModelConfig) -> (Parameters, Seq2Seq) {
        let mut params = Parameters::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let model = Seq2Seq::build(&mut Initializer { params: &mut params, rng: &mut rng }, "m", cfg).unwrap();
        // Non-zero output projection so logits depend on the decoder.
        let out_w = model.output.weight;
        for (i, v) in params.value_mut(out_w).data_mut().iter_mut().enumerate() {
            *v = ((i * 37 % 11) as f64 - 5.0) * 0.1;
        }
        (params, model)
    }

    #[test]
    fn decoder_is_causal() {
        let cfg = tiny_config();
        let (params, model) = tiny_model(&cfg);
        let logits_for = |prefix: &[usize]| {
            let mut g = Graph::new(&params);
            let mem = model.encode(&mut g, &[1, 2, 3], &mut Dropout::off()).unwrap();
            let l = model.decode(&mut g, prefix, mem, &mut Dropout::off()).unwrap();
            g.value(l).clone()
        };
        let a = logits_for(&[0, 1, 2, 3, 4]);
        let b = logits_for(&[0, 1, 2, 5, 5]);
        for t in 0..3 {
            assert_eq!(a.row(t), b.row(t), "position {t} saw the future");
        }
        assert_ne!(a.row(3), b.row(3));
    }

    #[test]
    fn zero_layer_encoder_is_embedding_plus_positions() {
        let cfg = ModelConfig { n_layers: 0, ..tiny_config() };
        let mut params = Parameters::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let enc = TransformerEncoder::build(&mut Initializer { params: &mut params, rng: &mut rng }, "e", 7, &cfg).unwrap();
        let mut g = Graph::new(&params);
        let out = enc.forward(&mut g, &[4, 0, 6], &mut Dropout::off()).unwrap();
        let table = params.value(enc.embedding.table);
        let pe = sinusoidal_positions(3, 8, 16).unwrap();
        for (r, id) in [4usize, 0, 6].iter().enumerate() {
            for c in 0..8 {
                assert_eq!(g.value(out).get(r, c), table.get(*id, c) + pe.get(r, c));
            }
        }
    }

    #[test]
    fn encoder_rejects_oversized_ids_and_lengths() {
        let cfg = tiny_config();
        let (params, model) = tiny_model(&cfg);
        let mut g = Graph::new(&params);
        assert!(matches!(model.encode(&mut g, &[9], &mut Dropout::off()), Err(NeuralError::VocabOverflow { id: 9, size: 7 })));
        let long = vec![1; 17];
        assert!(matches!(model.encode(&mut g, &long, &mut Dropout::off()), Err(NeuralError::LenExceeded { .. })));
    }

    #[test]
    fn fixed_seed_logits_are_golden() {
        let cfg = tiny_config();
        let (params, model) = tiny_model(&cfg);
        let mut g = Graph::new(&params);
        let mem = model.encode(&mut g, &[1, 2, 3], &mut Dropout::off()).unwrap();
        let l = model.decode(&mut g, &[0, 4], mem, &mut Dropout::off()).unwrap();
        let sum: f64 = g.value(l).data().iter().sum();
        let first = g.value(l).get(1, 2);
        assert_eq!(g.value(l).shape(), &[2, 6]);
        // Frozen after the first verified run of this seed and input.
        assert!((sum - GOLDEN_SUM).abs() < 1e-12, "sum {sum:.15}, first {first:.15}");
        assert!((first - GOLDEN_FIRST).abs() < 1e-12, "sum {sum:.15}, first {first:.15}");
    }

    const GOLDEN_SUM: f64 = -0.058_455_795_881_998;
    const GOLDEN_FIRST: f64 = 0.766_019_551_361_742;
}
