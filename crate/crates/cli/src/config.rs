//! Run configuration shared by every subcommand.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::Result;
use serde::{Deserialize, Serialize};

use gesture_forge::features::{
    AudioEmbeddingProvider, ExternalAudioProvider, ExternalTextProvider, MockAudioProvider, MockTextProvider,
    TextEmbeddingProvider,
};
use gesture_forge::fusion::FusionMode;
use gesture_forge::generator::{AdamWConfig, GeneratorConfig, LossWeights};
use gesture_forge::metrics::{AutoencoderConfig, DEFAULT_SIGMA};

use crate::UsageError;

pub const PROVIDERS_ENV: &str = "GESTURE_FORGE_PROVIDERS";
pub const RUN_CONFIG_FILE: &str = "run_config.json";

/// Generator hyperparameters that do not depend on the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelShape {
    pub segment_len: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub memory_len: usize,
    pub ffn_mult: usize,
}

impl Default for ModelShape {
    fn default() -> Self {
        let c = GeneratorConfig::new(0, 0);
        Self {
            segment_len: c.segment_len,
            d_model: c.d_model,
            n_layers: c.n_layers,
            n_heads: c.n_heads,
            memory_len: c.memory_len,
            ffn_mult: c.ffn_mult,
        }
    }
}

impl ModelShape {
    pub fn generator_config(&self, pose_dim: usize, seed: u64) -> GeneratorConfig {
        GeneratorConfig {
            segment_len: self.segment_len,
            d_model: self.d_model,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            memory_len: self.memory_len,
            ffn_mult: self.ffn_mult,
            ..GeneratorConfig::new(pose_dim, seed)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Mock,
    External,
}

impl FromStr for ProviderKind {
    type Err = UsageError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "mock" => Ok(ProviderKind::Mock),
            "external" => Ok(ProviderKind::External),
            other => Err(UsageError(format!("{PROVIDERS_ENV} must be `mock` or `external`, got `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub audio_dim: usize,
    pub text_dim: usize,
    pub audio_command: Vec<String>,
    pub text_command: Vec<String>,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self { kind: ProviderKind::Mock, audio_dim: 16, text_dim: 16, audio_command: Vec::new(), text_command: Vec::new() }
    }
}

pub type Providers = (Box<dyn AudioEmbeddingProvider>, Box<dyn TextEmbeddingProvider>);

impl ProviderConfig {
    pub fn build(&self, seed: u64) -> Result<Providers> {
        match self.kind {
            ProviderKind::Mock => Ok((
                Box::new(MockAudioProvider::new(self.audio_dim, seed)),
                Box::new(MockTextProvider::new(self.text_dim, seed)),
            )),
            ProviderKind::External => {
                if self.audio_command.is_empty() || self.text_command.is_empty() {
                    return Err(UsageError(
                        "external providers need providers.audio_command and providers.text_command".into(),
                    )
                    .into());
                }
                Ok((
                    Box::new(ExternalAudioProvider { command: self.audio_command.clone(), dim: self.audio_dim }),
                    Box::new(ExternalTextProvider { command: self.text_command.clone(), dim: self.text_dim }),
                ))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub seed: u64,
    pub fusion: FusionMode,
    pub generator: ModelShape,
    pub loss_weights: LossWeights,
    pub optimizer: AdamWConfig,
    pub epochs: usize,
    pub shuffle: bool,
    pub providers: ProviderConfig,
    pub autoencoder: AutoencoderConfig,
    pub beat_sigma: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            seed: 0,
            fusion: FusionMode::Concat,
            generator: ModelShape::default(),
            loss_weights: LossWeights::default(),
            optimizer: AdamWConfig::default(),
            epochs: 10,
            shuffle: true,
            providers: ProviderConfig::default(),
            autoencoder: AutoencoderConfig::default(),
            beat_sigma: DEFAULT_SIGMA,
        }
    }
}

/// Flags that override the configuration file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub fusion: Option<FusionMode>,
    pub epochs: Option<usize>,
    pub dataset: Option<PathBuf>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| UsageError(format!("config: {e}")).into())
    }

    /// Reads `path` (or the defaults), applies flags and the provider
    /// environment variable.
    pub fn resolve(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| UsageError(format!("config {}: {e}", p.display())))?;
                Self::parse(&text)?
            }
            None => Self::default(),
        };
        if let Some(s) = overrides.seed {
            cfg.seed = s;
        }
        if let Some(f) = overrides.fusion {
            cfg.fusion = f;
        }
        if let Some(e) = overrides.epochs {
            cfg.epochs = e;
        }
        if let Some(d) = &overrides.dataset {
            cfg.dataset = Some(d.clone());
        }
        if let Ok(v) = std::env::var(PROVIDERS_ENV) {
            cfg.providers.kind = v.parse()?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let usage = |m: String| -> anyhow::Error { UsageError(format!("config: {m}")).into() };
        self.generator.generator_config(9, self.seed).validate().map_err(|e| usage(e.to_string()))?;
        self.loss_weights.validate().map_err(|e| usage(e.to_string()))?;
        if self.providers.audio_dim == 0 || self.providers.text_dim == 0 {
            return Err(usage("provider dimensions must be positive".into()));
        }
        if !(self.beat_sigma > 0.0 && self.beat_sigma.is_finite()) {
            return Err(usage(format!("beat_sigma must be positive, got {}", self.beat_sigma)));
        }
        Ok(())
    }

    pub fn dataset(&self) -> Result<&Path> {
        self.dataset.as_deref().ok_or_else(|| UsageError("no dataset: pass --dataset or set `dataset`".into()).into())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        let err = RunConfig::parse(r#"{"seed": 1, "sed": 2}"#).unwrap_err();
        assert!(err.downcast_ref::<UsageError>().is_some());
        assert!(RunConfig::parse(r#"{"generator": {"layers": 2}}"#).is_err());
        assert!(RunConfig::parse(r#"{"providers": {"kind": "remote"}}"#).is_err());
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let cfg = RunConfig::parse(r#"{"seed": 3, "generator": {"d_model": 8}, "optimizer": {"lr": 0.01}}"#).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.generator.d_model, 8);
        assert_eq!(cfg.generator.n_layers, ModelShape::default().n_layers);
        assert_eq!(cfg.optimizer.lr, 0.01);
        assert_eq!(cfg.optimizer.beta2, AdamWConfig::default().beta2);
        assert_eq!(cfg.fusion, FusionMode::Concat);
    }

    #[test]
    fn serialized_defaults_round_trip() {
        let cfg = RunConfig { fusion: FusionMode::CrossAttention, ..RunConfig::default() };
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::parse(&text).unwrap(), cfg);
    }

    #[test]
    fn external_without_commands_is_usage_error() {
        let p = ProviderConfig { kind: ProviderKind::External, ..Default::default() };
        assert!(p.build(0).err().unwrap().downcast_ref::<UsageError>().is_some());
    }
}
