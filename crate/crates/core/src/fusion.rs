//! Combining audio, text and speaker features into the model input.

use std::fmt;
use std::str::FromStr;

use ndarray::{concatenate, Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::features::{FeatureMatrix, Modality, SPEAKER_DIM};

#[derive(Debug, Error, PartialEq)]
pub enum FusionError {
    #[error("frame counts differ: {0:?}")]
    FrameMismatch(Vec<usize>),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("modality {0:?} cannot be projected on its own")]
    Modality(Modality),
    #[error("cross-attention needs at least one frame")]
    Empty,
    #[error("unknown fusion mode `{0}`")]
    UnknownMode(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    AudioOnly,
    TextOnly,
    Concat,
    CrossAttention,
}

impl FusionMode {
    pub const ALL: [FusionMode; 4] = [Self::AudioOnly, Self::TextOnly, Self::Concat, Self::CrossAttention];

    /// Name of the system variant built on this mode.
    pub fn system_name(self) -> &'static str {
        match self {
            Self::AudioOnly => "pase",
            Self::TextOnly => "llanimation",
            Self::Concat => "llanimation-plus",
            Self::CrossAttention => "llanimation-cross",
        }
    }

    pub fn uses_audio(self) -> bool {
        !matches!(self, Self::TextOnly)
    }

    pub fn uses_text(self) -> bool {
        !matches!(self, Self::AudioOnly)
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::AudioOnly => "audio_only",
            Self::TextOnly => "text_only",
            Self::Concat => "concat",
            Self::CrossAttention => "cross_attention",
        })
    }
}

impl FromStr for FusionMode {
    type Err = FusionError;

    /// Accepts both mode names and system names.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|m| m.to_string() == key || m.system_name().replace('-', "_") == key)
            .ok_or_else(|| FusionError::UnknownMode(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub mode: FusionMode,
    pub d: usize,
}

/// Affine map `y = W x + b` with `W` stored output × input.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Projection {
    /// Uniform(±1/√fan_in) weight, zero bias.
    pub fn init<R: Rng>(input: usize, output: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (input.max(1) as f64).sqrt();
        Self {
            weight: Array2::from_shape_fn((output, input), |_| rng.random_range(-bound..bound)),
            bias: Array1::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }

    /// Applies the map to every row of `x`.
    pub fn apply(&self, x: &Array2<f64>) -> Result<Array2<f64>, FusionError> {
        if x.ncols() != self.input_dim() {
            return Err(FusionError::Dimension(format!(
                "input has {} columns, projection expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        Ok(x.dot(&self.weight.t()) + &self.bias)
    }
}

fn same_rows(ms: &[&FeatureMatrix]) -> Result<usize, FusionError> {
    let rows: Vec<usize> = ms.iter().map(|m| m.rows()).collect();
    if rows.windows(2).any(|w| w[0] != w[1]) {
        return Err(FusionError::FrameMismatch(rows));
    }
    Ok(rows[0])
}

fn concat_features(ms: &[&FeatureMatrix]) -> Array2<f64> {
    let parts: Vec<Array2<f64>> = ms.iter().map(|m| m.to_f64()).collect();
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    concatenate(Axis(1), &views).expect("row counts checked")
}

fn fused(values: Array2<f64>) -> FeatureMatrix {
    FeatureMatrix::new(values.mapv(|v| v as f32), Modality::Fused)
}

/// Row-wise projection of `(modality, speaker)`.
pub fn project_single(
    modality_matrix: &FeatureMatrix,
    speaker: &FeatureMatrix,
    proj: &Projection,
) -> Result<FeatureMatrix, FusionError> {
    if !matches!(modality_matrix.modality, Modality::Audio | Modality::Text) {
        return Err(FusionError::Modality(modality_matrix.modality));
    }
    same_rows(&[modality_matrix, speaker])?;
    Ok(fused(proj.apply(&concat_features(&[modality_matrix, speaker]))?))
}

/// One linear layer over `(A, T, S)`.
pub fn fuse_concat(
    a: &FeatureMatrix,
    t: &FeatureMatrix,
    s: &FeatureMatrix,
    proj: &Projection,
) -> Result<FeatureMatrix, FusionError> {
    same_rows(&[a, t, s])?;
    Ok(fused(proj.apply(&concat_features(&[a, t, s]))?))
}

/// Row-wise softmax, max-shifted.
pub fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Projected audio queries attending over projected text frames.
pub fn fuse_cross_attention(
    a: &FeatureMatrix,
    t: &FeatureMatrix,
    s: &FeatureMatrix,
    proj_a: &Projection,
    proj_t: &Projection,
    d: usize,
) -> Result<FeatureMatrix, FusionError> {
    let n = same_rows(&[a, t, s])?;
    if n == 0 {
        return Err(FusionError::Empty);
    }
    if proj_a.output_dim() != d || proj_t.output_dim() != d {
        return Err(FusionError::Dimension(format!(
            "projection outputs {} and {} must both equal d = {d}",
            proj_a.output_dim(),
            proj_t.output_dim()
        )));
    }
    let xa = proj_a.apply(&concat_features(&[a, s]))?;
    let xt = proj_t.apply(&concat_features(&[t, s]))?;
    let weights = softmax_rows(&(xa.dot(&xt.t()) / (d as f64).sqrt()));
    Ok(fused(weights.dot(&xt)))
}

/// Parameter handles of one projection inside a [`ParamStore`]. The weight
/// is stored input × output so it multiplies row features directly.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectionParams {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl ProjectionParams {
    pub fn init<R: Rng>(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut R) -> Self {
        let p = Projection::init(input, output, rng);
        let weight = store.add(format!("{name}.weight"), p.weight.t().to_owned(), true);
        let bias = store.add(format!("{name}.bias"), Array2::zeros((1, output)), false);
        Self { weight, bias }
    }

    pub fn projection(&self, store: &ParamStore) -> Projection {
        Projection { weight: store.get(self.weight).t().to_owned(), bias: store.get(self.bias).row(0).to_owned() }
    }

    pub fn forward(&self, tape: &Tape, store: &ParamStore, x: Var) -> Var {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        tape.linear(x, w, Some(b))
    }
}

/// Trainable fusion layer for one mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionLayer {
    pub config: FusionConfig,
    pub audio_dim: usize,
    pub text_dim: usize,
    pub audio: Option<ProjectionParams>,
    pub text: Option<ProjectionParams>,
    pub joint: Option<ProjectionParams>,
}

impl FusionLayer {
    pub fn init<R: Rng>(
        config: FusionConfig,
        audio_dim: usize,
        text_dim: usize,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Self {
        let d = config.d;
        let (mut audio, mut text, mut joint) = (None, None, None);
        match config.mode {
            FusionMode::AudioOnly => audio = Some(ProjectionParams::init(store, "fusion.audio", audio_dim + SPEAKER_DIM, d, rng)),
            FusionMode::TextOnly => text = Some(ProjectionParams::init(store, "fusion.text", text_dim + SPEAKER_DIM, d, rng)),
            FusionMode::Concat => {
                joint = Some(ProjectionParams::init(store, "fusion.joint", audio_dim + text_dim + SPEAKER_DIM, d, rng))
            }
            FusionMode::CrossAttention => {
                audio = Some(ProjectionParams::init(store, "fusion.audio", audio_dim + SPEAKER_DIM, d, rng));
                text = Some(ProjectionParams::init(store, "fusion.text", text_dim + SPEAKER_DIM, d, rng));
            }
        }
        Self { config, audio_dim, text_dim, audio, text, joint }
    }

    /// Fused N × d block. `a` and `t` may be empty-width placeholders for
    /// modalities the mode does not read.
    pub fn forward(&self, tape: &Tape, store: &ParamStore, a: Var, t: Var, s: Var) -> Var {
        match self.config.mode {
            FusionMode::AudioOnly => {
                let x = tape.concat_cols(&[a, s]);
                self.audio.expect("audio projection").forward(tape, store, x)
            }
            FusionMode::TextOnly => {
                let x = tape.concat_cols(&[t, s]);
                self.text.expect("text projection").forward(tape, store, x)
            }
            FusionMode::Concat => {
                let x = tape.concat_cols(&[a, t, s]);
                self.joint.expect("joint projection").forward(tape, store, x)
            }
            FusionMode::CrossAttention => {
                let xa = self.audio.expect("audio projection").forward(tape, store, tape.concat_cols(&[a, s]));
                let xt = self.text.expect("text projection").forward(tape, store, tape.concat_cols(&[t, s]));
                let logits = tape.scale(tape.matmul_t(xa, xt), 1.0 / (self.config.d as f64).sqrt());
                tape.matmul(tape.softmax_rows(logits), xt)
            }
        }
    }

    /// Evaluates the layer on plain matrices with the current parameters.
    pub fn apply(
        &self,
        store: &ParamStore,
        a: &FeatureMatrix,
        t: &FeatureMatrix,
        s: &FeatureMatrix,
    ) -> Result<FeatureMatrix, FusionError> {
        match self.config.mode {
            FusionMode::AudioOnly => project_single(a, s, &self.audio.expect("audio projection").projection(store)),
            FusionMode::TextOnly => project_single(t, s, &self.text.expect("text projection").projection(store)),
            FusionMode::Concat => fuse_concat(a, t, s, &self.joint.expect("joint projection").projection(store)),
            FusionMode::CrossAttention => fuse_cross_attention(
                a,
                t,
                s,
                &self.audio.expect("audio projection").projection(store),
                &self.text.expect("text projection").projection(store),
                self.config.d,
            ),
        }
    }
}
