//! Run configuration, read from a TOML file of `key = value` entries.
//!
//! ```toml
//! [synthetic]
//! classes = 5
//! noise = 0.01
//!
//! [data]
//! frames = 40
//!
//! [pretrain]
//! scheme = "temporal"
//! input = "hint:0.5"
//! epochs = 150
//! lr_max = 1e-5
//! lr_min = 1e-7
//!
//! [pretrain.encoder]
//! feature_dim = 128
//!
//! [classifier]
//! protocol = "unsupervised"
//! lr_max = 0.001
//! ```
//!
//! Every key is optional; missing keys take the defaults below. Unknown keys
//! are rejected.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::chamfer::ChamferConfig;
use crate::colorize::ColorScheme;
use crate::error::{Error, Result};
use crate::evalbench::SyntheticSpec;
use crate::net::{DecoderConfig, EncoderConfig, InputMode, ModelConfig};
use crate::training::optim::AdamConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Frames kept per sequence after uniform resampling.
    pub frames: usize,
    /// Joint moved to the origin during normalization (0-based).
    pub root_joint: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            frames: 40,
            root_joint: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub scheme: ColorScheme,
    pub input: InputMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub seed: u64,
    pub adam: AdamConfig,
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub chamfer: ChamferConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            scheme: ColorScheme::Temporal,
            input: InputMode::Hint(0.5),
            epochs: 150,
            batch_size: 24,
            lr_max: 1e-5,
            lr_min: 1e-7,
            seed: 0,
            adam: AdamConfig::default(),
            encoder: EncoderConfig::default(),
            decoder: DecoderConfig::default(),
            chamfer: ChamferConfig::default(),
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr_min > self.lr_max || self.lr_min < 0.0 {
            return Err(Error::Config("need 0 <= lr_min <= lr_max".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if let InputMode::Hint(r) = self.input {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Config("hint ratio must be in [0, 1]".into()));
            }
        }
        Ok(())
    }

    /// Model configuration for clouds of up to `max_points` points; a zero
    /// grid side is resolved to `ceil(sqrt(max_points))`.
    pub fn model_config(&self, max_points: usize) -> ModelConfig {
        let mut decoder = self.decoder.clone();
        if decoder.grid_side == 0 {
            decoder.grid_side = DecoderConfig::grid_for(max_points);
        }
        ModelConfig {
            scheme: self.scheme,
            input: self.input,
            encoder: self.encoder.clone(),
            decoder,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProtocolKind {
    /// Linear probe on frozen encoders.
    Unsupervised,
    /// Fine-tune encoders and classifier on a labeled fraction.
    Semi,
    /// Fine-tune on all labels.
    Supervised,
}

/// Evaluation protocol with its labeled fraction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Protocol {
    Unsupervised,
    SemiSupervised(f64),
    Supervised,
}

/// How per-stream features are combined for classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fusion {
    /// Concatenate stream features (order: temporal, spatial, person) under one classifier.
    #[default]
    Concat,
    /// One classifier per stream; softmax scores are averaged.
    Score,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub protocol: ProtocolKind,
    /// Labeled fraction for the semi-supervised protocol.
    pub fraction: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub momentum: f64,
    pub fusion: Fusion,
    /// Z-score features with training-split statistics before the linear probe.
    pub standardize: bool,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            protocol: ProtocolKind::Unsupervised,
            fraction: 1.0,
            epochs: 100,
            batch_size: 32,
            lr_max: 1e-3,
            lr_min: 1e-5,
            momentum: 0.9,
            fusion: Fusion::Concat,
            standardize: false,
            seed: 0,
        }
    }
}

impl ClassifierConfig {
    pub fn protocol(&self) -> Protocol {
        match self.protocol {
            ProtocolKind::Unsupervised => Protocol::Unsupervised,
            ProtocolKind::Semi => Protocol::SemiSupervised(self.fraction),
            ProtocolKind::Supervised => Protocol::Supervised,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lr_min > self.lr_max || self.lr_min < 0.0 {
            return Err(Error::Config("need 0 <= lr_min <= lr_max".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::Config("fraction must be in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Synthetic benchmark used by `gen-data`.
    pub synthetic: SyntheticSpec,
    pub data: DataConfig,
    pub pretrain: PretrainConfig,
    pub classifier: ClassifierConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.frames == 0 {
            return Err(Error::Config("data.frames must be >= 1".into()));
        }
        self.synthetic.validate()?;
        self.pretrain.validate()?;
        self.classifier.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chamfer::{MaxGradient, Reduction};

    #[test]
    fn defaults_match_published_settings() {
        let c = RunConfig::default();
        assert_eq!(c.data.frames, 40);
        assert_eq!((c.pretrain.epochs, c.pretrain.batch_size), (150, 24));
        assert_eq!((c.pretrain.lr_max, c.pretrain.lr_min), (1e-5, 1e-7));
        assert_eq!(
            c.pretrain.adam,
            AdamConfig {
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8
            }
        );
        assert_eq!((c.classifier.lr_max, c.classifier.lr_min), (1e-3, 1e-5));
        assert_eq!((c.classifier.momentum, c.classifier.epochs), (0.9, 100));
    }

    #[test]
    fn parses_partial_file() {
        let c = RunConfig::from_toml_str(
            r#"
            [data]
            frames = 16
            [pretrain]
            scheme = "spatial"
            input = "raw"
            epochs = 3
            [pretrain.encoder]
            feature_dim = 32
            block_widths = [8, 8]
            [pretrain.chamfer]
            reduction = "sum"
            max_gradient = { smoothed = { temperature = 0.01 } }
            [classifier]
            protocol = "semi"
            fraction = 0.05
            fusion = "score"
            "#,
        )
        .unwrap();
        assert_eq!(c.data.frames, 16);
        assert_eq!(c.pretrain.scheme, ColorScheme::Spatial);
        assert_eq!(c.pretrain.input, InputMode::Raw);
        assert_eq!(c.pretrain.encoder.feature_dim, 32);
        assert_eq!(c.pretrain.encoder.k, 6);
        assert_eq!(c.pretrain.chamfer.reduction, Reduction::Sum);
        assert_eq!(
            c.pretrain.chamfer.max_gradient,
            MaxGradient::Smoothed { temperature: 0.01 }
        );
        assert_eq!(c.classifier.protocol(), Protocol::SemiSupervised(0.05));
        assert_eq!(c.classifier.fusion, Fusion::Score);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(RunConfig::from_toml_str("[pretrain]\nepoch = 3\n").is_err());
        assert!(RunConfig::from_toml_str("[pretrain]\nlr_max = 1e-7\nlr_min = 1e-5\n").is_err());
        assert!(RunConfig::from_toml_str("[classifier]\nfraction = 0.0\n").is_err());
        assert!(RunConfig::from_toml_str("[pretrain]\ninput = \"hint:3\"\n").is_err());
    }

    #[test]
    fn serialized_config_reads_back() {
        let mut c = RunConfig::default();
        c.pretrain.input = InputMode::Hint(0.25);
        c.pretrain.chamfer.max_gradient = MaxGradient::Smoothed { temperature: 0.5 };
        let back = RunConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn grid_resolution() {
        let p = PretrainConfig::default();
        assert_eq!(p.model_config(1000).decoder.grid_side, 32);
        let mut q = p.clone();
        q.decoder.grid_side = 7;
        assert_eq!(q.model_config(1000).decoder.grid_side, 7);
    }
}
