use std::collections::HashMap;

use rand::Rng;
use sha2::{Digest, Sha256};

use super::array::Array;
use super::NeuralError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub(crate) fn index(self) -> usize {
        self.0
    }

    pub(crate) fn from_index(i: usize) -> Self {
        ParamId(i)
    }
}

/// Named parameter arrays in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Parameters {
    names: Vec<String>,
    values: Vec<Array>,
    trainable: Vec<bool>,
    index: HashMap<String, usize>,
}

impl Parameters {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.values.push(value);
        self.trainable.push(true);
        ParamId(self.names.len() - 1)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Array {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array {
        &mut self.values[id.0]
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.trainable[id.0]
    }

    /// Freezes or unfreezes every parameter whose name starts with `prefix`.
    pub fn set_trainable_prefix(&mut self, prefix: &str, trainable: bool) {
        for (name, flag) in self.names.iter().zip(self.trainable.iter_mut()) {
            if name.starts_with(prefix) {
                *flag = trainable;
            }
        }
    }

    pub fn set_trainable_exact(&mut self, name: &str, trainable: bool) {
        if let Some(&i) = self.index.get(name) {
            self.trainable[i] = trainable;
        }
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.names.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Array)> {
        self.names.iter().zip(&self.values).enumerate().map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn count_scalars(&self) -> usize {
        self.values.iter().map(Array::len).sum()
    }

    /// SHA-256 over names, shapes and little-endian values, as hex.
    pub fn fingerprint(&self) -> String {
        self.fingerprint_prefix("")
    }

    pub fn fingerprint_prefix(&self, prefix: &str) -> String {
        let mut hasher = Sha256::new();
        for (_, name, value) in self.iter().filter(|(_, n, _)| n.starts_with(prefix)) {
            hasher.update(name.as_bytes());
            for d in value.shape() {
                hasher.update((*d as u64).to_le_bytes());
            }
            for v in value.data() {
                hasher.update(v.to_le_bytes());
            }
        }
        hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Copies every parameter named in `other` into `self`; shapes must agree.
    pub fn copy_from(&mut self, other: &Parameters, prefix: &str) -> Result<usize, NeuralError> {
        let mut copied = 0;
        for (_, name, value) in other.iter().filter(|(_, n, _)| n.starts_with(prefix)) {
            let id = self.id(name).ok_or_else(|| NeuralError::MissingParam(name.to_string()))?;
            if self.value(id).shape() != value.shape() {
                return Err(NeuralError::ShapeMismatch(format!(
                    "{name}: {:?} vs {:?}",
                    self.value(id).shape(),
                    value.shape()
                )));
            }
            *self.value_mut(id) = value.clone();
            copied += 1;
        }
        Ok(copied)
    }
}

/// How a fresh parameter is filled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform in `±1/sqrt(fan_in)`.
    FanIn(usize),
    Zeros,
    Ones,
}

/// Source of parameters for model construction: fresh initialization or
/// lookup in an existing store (checkpoint restore).
pub trait ParamSource {
    fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<ParamId, NeuralError>;
}

pub struct Initializer<'a, R: Rng> {
    pub params: &'a mut Parameters,
    pub rng: &'a mut R,
}

impl<R: Rng> ParamSource for Initializer<'_, R> {
    fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<ParamId, NeuralError> {
        let n: usize = shape.iter().product();
        let data = match init {
            Init::FanIn(fan_in) => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                (0..n).map(|_| self.rng.gen_range(-bound..bound)).collect()
            }
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
        };
        Ok(self.params.insert(name, Array::new(shape.to_vec(), data)))
    }
}

pub struct Binder<'a> {
    pub params: &'a Parameters,
}

impl ParamSource for Binder<'_> {
    fn param(&mut self, name: &str, shape: &[usize], _init: Init) -> Result<ParamId, NeuralError> {
        let id = self.params.id(name).ok_or_else(|| NeuralError::MissingParam(name.to_string()))?;
        if self.params.value(id).shape() != shape {
            return Err(NeuralError::ShapeMismatch(format!(
                "{name}: stored {:?}, expected {shape:?}",
                self.params.value(id).shape()
            )));
        }
        Ok(id)
    }
}
