//! Frame-aligned audio, text and speaker feature matrices.

pub mod archive;
pub mod providers;
pub mod speaker;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pose::FPS;
pub use archive::{load_archive, save_archive};
pub use providers::{
    AudioEmbeddingProvider, ExternalAudioProvider, ExternalTextProvider, MockAudioProvider, MockTextProvider,
    TextEmbeddingProvider,
};
pub use speaker::{speaker_rows, SpeakerTable, SPEAKER_DIM};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("transcript line {line}: {message}")]
    Transcript { line: usize, message: String },
    #[error("{0} embeddings for {1} words")]
    EmbeddingCount(usize, usize),
    #[error("embedding dimension {got}, expected {expected}")]
    EmbeddingDim { expected: usize, got: usize },
    #[error("provider contract violated: {0}")]
    Contract(String),
    #[error("audio too short: {samples} samples for {frames} frames")]
    AudioTooShort { samples: usize, frames: usize },
    #[error("frame count must be at least 1")]
    NoFrames,
    #[error("archive entry `{entry}` is corrupt: {message}")]
    Corrupt { entry: String, message: String },
    #[error("archive: {0}")]
    Archive(String),
    #[error("provider process: {0}")]
    Process(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Audio,
    Text,
    Speaker,
    Fused,
}

/// N × D frame-aligned feature block.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub values: Array2<f32>,
    pub modality: Modality,
    pub fps: f64,
}

impl FeatureMatrix {
    pub fn new(values: Array2<f32>, modality: Modality) -> Self {
        Self { values, modality, fps: FPS }
    }

    pub fn zeros(rows: usize, cols: usize, modality: Modality) -> Self {
        Self::new(Array2::zeros((rows, cols)), modality)
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn to_f64(&self) -> Array2<f64> {
        self.values.mapv(f64::from)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// One transcribed word with its timing in seconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranscriptWord {
    pub text: String,
    pub start: f64,
    pub end: f64,
}

impl TranscriptWord {
    pub fn new(text: impl Into<String>, start: f64, end: f64) -> Self {
        Self { text: text.into(), start, end }
    }
}

/// Parses a `start<TAB>end<TAB>word` transcript. A non-numeric first row is
/// treated as a header.
pub fn parse_transcript(text: &str) -> Result<Vec<TranscriptWord>, FeatureError> {
    let mut words: Vec<TranscriptWord> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = raw.split('\t').collect();
        let err = |message: String| FeatureError::Transcript { line, message };
        if cols.len() < 3 {
            return Err(err(format!("expected 3 tab-separated columns, found {}", cols.len())));
        }
        let (start, end) = match (cols[0].trim().parse::<f64>(), cols[1].trim().parse::<f64>()) {
            (Ok(s), Ok(e)) => (s, e),
            _ if words.is_empty() && i == 0 => continue,
            _ => return Err(err("non-numeric time".into())),
        };
        if !(start >= 0.0 && start < end && end.is_finite()) {
            return Err(err(format!("invalid interval [{start}, {end})")));
        }
        if let Some(prev) = words.last() {
            if start < prev.end {
                return Err(err(format!("word starts at {start} before the previous word ends at {}", prev.end)));
            }
        }
        words.push(TranscriptWord::new(cols[2..].join("\t").trim(), start, end));
    }
    Ok(words)
}

pub fn write_transcript(words: &[TranscriptWord]) -> String {
    words.iter().map(|w| format!("{:.3}\t{:.3}\t{}\n", w.start, w.end, w.text)).collect()
}

/// Something noteworthy that happened while aligning, without failing.
#[derive(Clone, Debug, PartialEq)]
pub enum AlignmentWarning {
    /// The word extends past the clip and was cut at the last frame.
    Clipped { word: String, end: f64, duration: f64 },
    /// The word starts after the clip ends and was dropped.
    Dropped { word: String, start: f64, duration: f64 },
}

/// Frames whose centers `(f + 0.5) / fps` fall in `[start, end)`.
fn frame_span(start: f64, end: f64, fps: f64, n_frames: usize) -> std::ops::Range<usize> {
    let first = (start * fps - 0.5).ceil().max(0.0) as usize;
    let last = ((end * fps - 0.5).ceil().max(0.0) as usize).min(n_frames);
    first.min(last)..last
}

/// Repeats each word's embedding over the frames it covers; frames with no
/// word are zero.
pub fn align_words_to_frames(
    words: &[TranscriptWord],
    embeddings: &[Vec<f32>],
    n_frames: usize,
) -> Result<(FeatureMatrix, Vec<AlignmentWarning>), FeatureError> {
    if n_frames == 0 {
        return Err(FeatureError::NoFrames);
    }
    if words.len() != embeddings.len() {
        return Err(FeatureError::EmbeddingCount(embeddings.len(), words.len()));
    }
    let dim = embeddings.first().map_or(0, Vec::len);
    if let Some(bad) = embeddings.iter().find(|e| e.len() != dim) {
        return Err(FeatureError::EmbeddingDim { expected: dim, got: bad.len() });
    }
    let duration = n_frames as f64 / FPS;
    let mut warnings = Vec::new();
    let mut values = Array2::zeros((n_frames, dim));
    for (word, emb) in words.iter().zip(embeddings) {
        if word.start >= duration {
            warnings.push(AlignmentWarning::Dropped { word: word.text.clone(), start: word.start, duration });
            continue;
        }
        if word.end > duration {
            warnings.push(AlignmentWarning::Clipped { word: word.text.clone(), end: word.end, duration });
        }
        for f in frame_span(word.start, word.end, FPS, n_frames) {
            for (dst, src) in values.row_mut(f).iter_mut().zip(emb) {
                *dst = *src;
            }
        }
    }
    for w in &warnings {
        log::warn!("transcript alignment: {w:?}");
    }
    Ok((FeatureMatrix::new(values, Modality::Text), warnings))
}

/// Runs the text provider over a transcript and aligns the result.
pub fn extract_text_features(
    provider: &dyn TextEmbeddingProvider,
    words: &[TranscriptWord],
    n_frames: usize,
) -> Result<FeatureMatrix, FeatureError> {
    if words.is_empty() {
        if n_frames == 0 {
            return Err(FeatureError::NoFrames);
        }
        return Ok(FeatureMatrix::zeros(n_frames, provider.dim(), Modality::Text));
    }
    let texts: Vec<String> = words.iter().map(|w| w.text.clone()).collect();
    let embeddings = provider.embed(&texts)?;
    if embeddings.len() != words.len() {
        return Err(FeatureError::Contract(format!("{} embeddings for {} words", embeddings.len(), words.len())));
    }
    if let Some(bad) = embeddings.iter().find(|e| e.len() != provider.dim()) {
        return Err(FeatureError::EmbeddingDim { expected: provider.dim(), got: bad.len() });
    }
    Ok(align_words_to_frames(words, &embeddings, n_frames)?.0)
}

/// Samples per motion frame at `sample_rate`.
pub fn samples_per_frame(sample_rate: u32) -> f64 {
    f64::from(sample_rate) / FPS
}

/// One provider embedding per motion frame. Tails up to one frame window
/// short are zero-padded; longer input is cut at `n_frames`.
pub fn extract_audio_features(
    provider: &dyn AudioEmbeddingProvider,
    wave: &[f32],
    sample_rate: u32,
    n_frames: usize,
) -> Result<FeatureMatrix, FeatureError> {
    if n_frames == 0 {
        return Err(FeatureError::NoFrames);
    }
    let hop = samples_per_frame(sample_rate);
    let required = (n_frames as f64 * hop).round() as usize;
    if (wave.len() as f64) < required as f64 - hop {
        return Err(FeatureError::AudioTooShort { samples: wave.len(), frames: n_frames });
    }
    let mut samples = wave[..wave.len().min(required)].to_vec();
    samples.resize(required, 0.0);
    let values = provider.embed(&samples, sample_rate, n_frames)?;
    if values.dim() != (n_frames, provider.dim()) {
        return Err(FeatureError::Contract(format!(
            "audio provider returned {:?}, expected ({n_frames}, {})",
            values.dim(),
            provider.dim()
        )));
    }
    let m = FeatureMatrix::new(values, Modality::Audio);
    if !m.is_finite() {
        return Err(FeatureError::Contract("audio provider returned non-finite values".into()));
    }
    Ok(m)
}
