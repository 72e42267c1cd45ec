//! Embedding providers.
//!
//! The pretrained speech and language encoders are frozen functions of
//! their input, so they sit behind two small traits. The mocks are
//! deterministic and need no model weights; the external adapters talk
//! JSON to a subprocess that wraps a real encoder.

use std::io::Write;
use std::process::{Command, Stdio};

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{samples_per_frame, FeatureError};

/// Word-level text encoder. Each word yields the embedding of its last
/// sub-word token.
pub trait TextEmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, words: &[String]) -> Result<Vec<Vec<f32>>, FeatureError>;
}

/// Frame-level speech encoder producing one row per ≈33 ms window.
pub trait AudioEmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, samples: &[f32], sample_rate: u32, frame_count: usize) -> Result<Array2<f32>, FeatureError>;
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

const SUFFIXES: [&str; 6] = ["ing", "ed", "ly", "er", "est", "s"];

/// Sub-word split used by the mock provider: a known suffix is peeled off
/// when at least three characters remain in front of it.
pub fn mock_tokenize(word: &str) -> Vec<String> {
    for suffix in SUFFIXES {
        if let Some(stem) = word.strip_suffix(suffix) {
            if stem.chars().count() >= 3 {
                return vec![stem.to_string(), suffix.to_string()];
            }
        }
    }
    vec![word.to_string()]
}

/// Maps each token to a seeded pseudo-random unit vector.
#[derive(Clone, Debug)]
pub struct MockTextProvider {
    dim: usize,
    seed: u64,
}

impl MockTextProvider {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self { dim, seed }
    }

    pub fn token_embedding(&self, token: &str) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(token.as_bytes()) ^ self.seed);
        let v: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        v.iter().map(|x| (x / norm) as f32).collect()
    }
}

impl TextEmbeddingProvider for MockTextProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, words: &[String]) -> Result<Vec<Vec<f32>>, FeatureError> {
        Ok(words
            .iter()
            .map(|w| {
                let tokens = mock_tokenize(w);
                self.token_embedding(tokens.last().expect("at least one token"))
            })
            .collect())
    }
}

const AUDIO_BASE_FEATURES: usize = 6;

/// Per-window energy descriptors mapped through a fixed random projection.
/// Silence maps to zero rows.
#[derive(Clone, Debug)]
pub struct MockAudioProvider {
    projection: Array2<f32>,
}

impl MockAudioProvider {
    pub fn new(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_a0d1_0000_0000);
        let scale = 1.0 / (AUDIO_BASE_FEATURES as f64).sqrt();
        let projection = Array2::from_shape_fn((AUDIO_BASE_FEATURES, dim), |_| {
            let v: f64 = StandardNormal.sample(&mut rng);
            (v * scale) as f32
        });
        Self { projection }
    }

    fn window_features(window: &[f32]) -> [f32; AUDIO_BASE_FEATURES] {
        let rms = |s: &[f32]| {
            if s.is_empty() {
                0.0
            } else {
                (s.iter().map(|v| v * v).sum::<f32>() / s.len() as f32).sqrt()
            }
        };
        let q = window.len() / 4;
        let diff = if window.len() > 1 {
            window.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f32>() / (window.len() - 1) as f32
        } else {
            0.0
        };
        [
            4.0 * rms(window),
            4.0 * rms(&window[..q]),
            4.0 * rms(&window[q..2 * q]),
            4.0 * rms(&window[2 * q..3 * q]),
            4.0 * rms(&window[3 * q..]),
            4.0 * diff,
        ]
    }
}

impl AudioEmbeddingProvider for MockAudioProvider {
    fn dim(&self) -> usize {
        self.projection.ncols()
    }

    fn embed(&self, samples: &[f32], sample_rate: u32, frame_count: usize) -> Result<Array2<f32>, FeatureError> {
        let hop = samples_per_frame(sample_rate);
        let mut base = Array2::zeros((frame_count, AUDIO_BASE_FEATURES));
        for f in 0..frame_count {
            let start = ((f as f64 * hop).round() as usize).min(samples.len());
            let end = (((f + 1) as f64 * hop).round() as usize).min(samples.len());
            for (k, v) in Self::window_features(&samples[start..end]).iter().enumerate() {
                base[[f, k]] = *v;
            }
        }
        Ok(base.dot(&self.projection))
    }
}

#[derive(Serialize)]
struct TextRequest<'a> {
    words: &'a [String],
}

#[derive(Serialize)]
struct AudioRequest<'a> {
    sample_rate: u32,
    frames: usize,
    samples: &'a [f32],
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    embeddings: Vec<Vec<f32>>,
}

fn run_json<T: Serialize>(command: &[String], request: &T) -> Result<EmbeddingResponse, FeatureError> {
    let (program, args) = command
        .split_first()
        .ok_or_else(|| FeatureError::Process("empty provider command".into()))?;
    let mut child = Command::new(program)
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::inherit())
        .spawn()
        .map_err(|e| FeatureError::Process(format!("cannot start `{program}`: {e}")))?;
    let payload = serde_json::to_vec(request)?;
    child
        .stdin
        .take()
        .expect("stdin is piped")
        .write_all(&payload)
        .map_err(|e| FeatureError::Process(format!("writing request: {e}")))?;
    let output = child.wait_with_output()?;
    if !output.status.success() {
        return Err(FeatureError::Process(format!("`{program}` exited with {}", output.status)));
    }
    Ok(serde_json::from_slice(&output.stdout)?)
}

/// Out-of-process text encoder. The command reads `{"words": [...]}` on
/// stdin and writes `{"embeddings": [[...], ...]}`, one row per word.
#[derive(Clone, Debug)]
pub struct ExternalTextProvider {
    pub command: Vec<String>,
    pub dim: usize,
}

impl TextEmbeddingProvider for ExternalTextProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, words: &[String]) -> Result<Vec<Vec<f32>>, FeatureError> {
        let resp = run_json(&self.command, &TextRequest { words })?;
        if resp.embeddings.len() != words.len() {
            return Err(FeatureError::Contract(format!(
                "text provider returned {} rows for {} words",
                resp.embeddings.len(),
                words.len()
            )));
        }
        Ok(resp.embeddings)
    }
}

/// Out-of-process audio encoder. The command reads
/// `{"sample_rate", "frames", "samples"}` and writes `{"embeddings"}` with
/// exactly `frames` rows.
#[derive(Clone, Debug)]
pub struct ExternalAudioProvider {
    pub command: Vec<String>,
    pub dim: usize,
}

impl AudioEmbeddingProvider for ExternalAudioProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, samples: &[f32], sample_rate: u32, frame_count: usize) -> Result<Array2<f32>, FeatureError> {
        let resp = run_json(&self.command, &AudioRequest { sample_rate, frames: frame_count, samples })?;
        let rows = resp.embeddings.len();
        if rows != frame_count || resp.embeddings.iter().any(|r| r.len() != self.dim) {
            return Err(FeatureError::Contract(format!(
                "audio provider returned {rows} rows for {frame_count} frames"
            )));
        }
        let flat: Vec<f32> = resp.embeddings.into_iter().flatten().collect();
        Ok(Array2::from_shape_vec((rows, self.dim), flat).expect("row widths checked"))
    }
}
