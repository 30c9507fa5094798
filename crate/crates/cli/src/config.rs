//! Versioned TOML run configuration. Command-line flags override it.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use textnorm::neural::{Activation, LrSchedule, ModelConfig, NormPosition};
use textnorm::verbalizer::BeamConfig;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub seed: Option<u64>,
    pub model: ModelSection,
    pub train: TrainSection,
    pub pretrain: PretrainSection,
    pub beam: BeamSection,
    pub paths: PathsSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            version: CONFIG_VERSION,
            seed: None,
            model: ModelSection::default(),
            train: TrainSection::default(),
            pretrain: PretrainSection::default(),
            beam: BeamSection::default(),
            paths: PathsSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub dropout_rate: f64,
    pub activation: String,
    pub norm: String,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        ModelSection {
            d_model: m.d_model,
            n_heads: m.n_heads,
            n_layers: m.n_layers,
            d_ff: m.d_ff,
            max_len: m.max_len,
            dropout_rate: m.dropout_rate,
            activation: "relu".into(),
            norm: "pre".into(),
        }
    }
}

impl ModelSection {
    pub fn to_model_config(&self, seed: u64) -> Result<ModelConfig, String> {
        let activation = match self.activation.as_str() {
            "relu" => Activation::Relu,
            "gelu" => Activation::Gelu,
            other => return Err(format!("unknown activation {other:?} (expected relu|gelu)")),
        };
        let norm = match self.norm.as_str() {
            "pre" => NormPosition::Pre,
            "post" => NormPosition::Post,
            other => return Err(format!("unknown norm position {other:?} (expected pre|post)")),
        };
        Ok(ModelConfig {
            d_model: self.d_model,
            n_heads: self.n_heads,
            n_layers: self.n_layers,
            d_ff: self.d_ff,
            max_len: self.max_len,
            source_vocab_size: 0,
            target_vocab_size: 0,
            dropout_rate: self.dropout_rate,
            seed,
            activation,
            norm,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub clip: Option<f64>,
    pub lambda: f64,
    pub neighbor_window: usize,
    pub schedule: LrSchedule,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = textnorm::two_stage::TwoStageConfig::default();
        TrainSection {
            steps: d.steps,
            batch_size: d.batch_size,
            learning_rate: d.adam.learning_rate,
            clip: d.clip,
            lambda: d.lambda,
            neighbor_window: d.neighbor_window,
            schedule: d.schedule,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainSection {
    pub steps: usize,
    pub mask_rate: f64,
    pub learning_rate: f64,
}

impl Default for PretrainSection {
    fn default() -> Self {
        let d = textnorm::tagger::MlmConfig::default();
        PretrainSection { steps: d.steps, mask_rate: d.mask_rate, learning_rate: d.adam.learning_rate }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BeamSection {
    pub width: usize,
    pub alpha: f64,
    pub max_steps: usize,
}

impl Default for BeamSection {
    fn default() -> Self {
        let b = BeamConfig::default();
        BeamSection { width: b.width, alpha: b.alpha, max_steps: b.max_steps }
    }
}

impl BeamSection {
    pub fn to_beam(&self) -> BeamConfig {
        BeamConfig { width: self.width, alpha: self.alpha, max_steps: self.max_steps }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub corpus: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub pretrained: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub log: Option<PathBuf>,
}

pub fn load(path: &Path) -> Result<RunConfig, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let cfg: RunConfig = toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    if cfg.version != CONFIG_VERSION {
        return Err(format!("{}: config version {} is not {CONFIG_VERSION}", path.display(), cfg.version));
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg: RunConfig = toml::from_str("version = 1\nseed = 4\n[model]\nd_model = 32\n").unwrap();
        assert_eq!(cfg.seed, Some(4));
        assert_eq!(cfg.model.d_model, 32);
        assert_eq!(cfg.model.n_heads, 2);
        assert_eq!(cfg.beam.width, 4);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("version = 1\n[model]\nwidth = 3\n").is_err());
    }
}
