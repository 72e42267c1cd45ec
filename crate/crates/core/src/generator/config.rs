use serde::{Deserialize, Serialize};

use super::GeneratorError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    /// Segment length W in frames.
    pub segment_len: usize,
    pub d_model: usize,
    /// Total self-attention layers, extension layers included.
    pub n_layers: usize,
    pub n_heads: usize,
    /// Frames of cached hidden state per layer.
    pub memory_len: usize,
    /// Width of the feed-forward hidden layer as a multiple of `d_model`.
    #[serde(default = "default_ffn_mult")]
    pub ffn_mult: usize,
    /// 3 + 6J.
    pub pose_dim: usize,
    pub seed: u64,
}

fn default_ffn_mult() -> usize {
    4
}

impl GeneratorConfig {
    pub const DEFAULT_SEGMENT_LEN: usize = 300;

    pub fn new(pose_dim: usize, seed: u64) -> Self {
        Self {
            segment_len: Self::DEFAULT_SEGMENT_LEN,
            d_model: 64,
            n_layers: 6,
            n_heads: 4,
            memory_len: Self::DEFAULT_SEGMENT_LEN,
            ffn_mult: default_ffn_mult(),
            pose_dim,
            seed,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads.max(1)
    }

    pub fn validate(&self) -> Result<(), GeneratorError> {
        let bad = |m: &str| Err(GeneratorError::Config(m.to_string()));
        if self.segment_len == 0 {
            return bad("segment length must be at least 1");
        }
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return bad("d_model must be a positive multiple of n_heads");
        }
        if self.n_layers == 0 {
            return bad("at least one layer is required");
        }
        if self.ffn_mult == 0 {
            return bad("ffn_mult must be at least 1");
        }
        if self.pose_dim < 9 || !(self.pose_dim - 3).is_multiple_of(6) {
            return bad("pose_dim must be 3 + 6J with J >= 1");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub w_r: f64,
    pub w_p: f64,
    pub w_v: f64,
    pub w_a: f64,
    pub w_k: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { w_r: 1.0, w_p: 1.0, w_v: 1.0, w_a: 1.0, w_k: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), GeneratorError> {
        let w = [self.w_r, self.w_p, self.w_v, self.w_a, self.w_k];
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(GeneratorError::Config("loss weights must be finite and nonnegative".into()));
        }
        if w.iter().all(|v| *v == 0.0) {
            return Err(GeneratorError::Config("at least one loss weight must be positive".into()));
        }
        Ok(())
    }
}

/// Learning-rate multiplier over the course of training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine from 1 at the first step to 0 after the last.
    Cosine,
}

impl LrSchedule {
    /// Multiplier for zero-based `step` out of `total`.
    pub fn factor(self, step: u64, total: u64) -> f64 {
        match self {
            LrSchedule::Constant => 1.0,
            LrSchedule::Cosine if total == 0 => 1.0,
            LrSchedule::Cosine => {
                let t = (step.min(total) as f64) / total as f64;
                0.5 * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub schedule: LrSchedule,
    /// Fraction of all steps spent ramping linearly up to `lr`.
    pub warmup: f64,
}

impl AdamWConfig {
    /// Learning-rate multiplier for zero-based `step` out of `total`.
    pub fn lr_factor(&self, step: u64, total: u64) -> f64 {
        let warm = (self.warmup * total as f64).round() as u64;
        if step < warm {
            return (step + 1) as f64 / warm as f64;
        }
        self.schedule.factor(step - warm, total - warm)
    }

    pub fn validate(&self) -> Result<(), GeneratorError> {
        let ok = self.lr.is_finite()
            && self.lr > 0.0
            && self.weight_decay >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && (0.0..1.0).contains(&self.warmup);
        if ok {
            Ok(())
        } else {
            Err(GeneratorError::Config(format!("invalid optimizer settings: {self:?}")))
        }
    }
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 1e-4, weight_decay: 1e-2, beta1: 0.9, beta2: 0.999, eps: 1e-8, schedule: LrSchedule::Constant, warmup: 0.0 }
    }
}
