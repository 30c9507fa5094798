//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        4 bytes  "TNCK"
//! version      u32      currently 1
//! meta_len     u64
//! meta         meta_len bytes of UTF-8 JSON
//! n_params     u32
//! per parameter:
//!   name_len   u32, then name_len bytes of UTF-8
//!   dtype      u8       0 = f64, 1 = f32
//!   trainable  u8       0 or 1
//!   ndim       u32, then ndim x u64 dims
//!   data       product(dims) values of dtype
//! rng seed     32 bytes (ChaCha8)
//! rng stream   u64
//! rng word_pos u128
//! ```

use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::array::Array;
use super::params::Parameters;
use super::NeuralError;

pub const MAGIC: &[u8; 4] = b"TNCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Dtype {
    #[default]
    F64,
    F32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState { seed: rng.get_seed(), stream: rng.get_stream(), word_pos: rng.get_word_pos() }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub params: Parameters,
    pub rng: RngState,
}

impl Checkpoint {
    pub fn to_bytes(&self, dtype: Dtype) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let meta = serde_json::to_vec(&self.meta).expect("JSON values always serialize");
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (id, name, value) in self.params.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(match dtype {
                Dtype::F64 => 0,
                Dtype::F32 => 1,
            });
            out.push(self.params.is_trainable(id) as u8);
            out.extend_from_slice(&(value.shape().len() as u32).to_le_bytes());
            for d in value.shape() {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            for v in value.data() {
                match dtype {
                    Dtype::F64 => out.extend_from_slice(&v.to_le_bytes()),
                    Dtype::F32 => out.extend_from_slice(&(*v as f32).to_le_bytes()),
                }
            }
        }
        out.extend_from_slice(&self.rng.seed);
        out.extend_from_slice(&self.rng.stream.to_le_bytes());
        out.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NeuralError> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(4)? != MAGIC {
            return Err(NeuralError::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(NeuralError::Checkpoint(format!("unsupported version {version}")));
        }
        let meta_len = r.u64()? as usize;
        let meta = serde_json::from_slice(r.take(meta_len)?)
            .map_err(|e| NeuralError::Checkpoint(format!("metadata: {e}")))?;
        let n = r.u32()?;
        let mut params = Parameters::new();
        for _ in 0..n {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| NeuralError::Checkpoint("parameter name is not UTF-8".into()))?
                .to_string();
            let dtype = r.take(1)?[0];
            let trainable = r.take(1)?[0] != 0;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let count: usize = shape.iter().product();
            let data = match dtype {
                0 => r.take(count * 8)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
                1 => r
                    .take(count * 4)?
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                    .collect(),
                other => return Err(NeuralError::Checkpoint(format!("unknown dtype tag {other}"))),
            };
            if params.id(&name).is_some() {
                return Err(NeuralError::Checkpoint(format!("duplicate parameter {name}")));
            }
            params.insert(name.clone(), Array::new(shape, data));
            if !trainable {
                params.set_trainable_exact(&name, false);
            }
        }
        let seed: [u8; 32] = r.take(32)?.try_into().unwrap();
        let stream = r.u64()?;
        let word_pos = u128::from_le_bytes(r.take(16)?.try_into().unwrap());
        if r.at != bytes.len() {
            return Err(NeuralError::Checkpoint(format!("{} trailing bytes", bytes.len() - r.at)));
        }
        Ok(Checkpoint { meta, params, rng: RngState { seed, stream, word_pos } })
    }

    pub fn save(&self, path: &Path, dtype: Dtype) -> Result<(), NeuralError> {
        fs::write(path, self.to_bytes(dtype))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NeuralError> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Hex SHA-256 of the serialized checkpoint.
    pub fn digest(&self, dtype: Dtype) -> String {
        digest_bytes(&self.to_bytes(dtype))
    }
}

pub fn digest_bytes(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NeuralError> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| NeuralError::Checkpoint(format!("truncated at byte {}", self.at)))?;
        let out = &self.bytes[self.at..end];
        self.at = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, NeuralError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, NeuralError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
