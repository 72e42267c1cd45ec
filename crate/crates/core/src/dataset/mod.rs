//! Dyadic session loading and synthetic dataset generation.

pub mod synthetic;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bvh::{parse_bvh, BvhError};
use crate::features::{
    extract_audio_features, extract_text_features, parse_transcript, samples_per_frame, AudioEmbeddingProvider,
    FeatureError, TextEmbeddingProvider, TranscriptWord,
};
use crate::generator::ClipFeatures;
use crate::pose::{encode_pose, MotionSequence, PoseError, FPS};

pub use synthetic::{make_synthetic, SyntheticManifest, SyntheticSession, SyntheticSpec, SYNTHETIC_MANIFEST};

pub const MAIN_AGENT: &str = "main-agent";
pub const INTERLOCUTOR: &str = "interlocutor";
pub const AUDIO_FILE: &str = "audio.wav";
pub const TRANSCRIPT_FILE: &str = "transcript.tsv";
pub const MOTION_FILE: &str = "motion.bvh";
pub const SPEAKER_FILE: &str = "speaker.txt";

/// Largest tolerated disagreement between an asset's duration and the
/// main-agent motion, in seconds.
pub const MAX_DURATION_GAP: f64 = 1.0;
const FPS_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("missing asset {0}")]
    Missing(PathBuf),
    #[error("session `{0}` not found under any split")]
    UnknownSession(String),
    #[error("{path}: motion is {fps:.4} fps, expected 30")]
    Fps { path: PathBuf, fps: f64 },
    #[error("{path}: duration {asset:.3} s disagrees with motion ({motion:.3} s) by more than 1 s")]
    Duration { path: PathBuf, asset: f64, motion: f64 },
    #[error("{path}: {message}")]
    Asset { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Bvh { path: PathBuf, source: BvhError },
    #[error("{path}: {source}")]
    Pose { path: PathBuf, source: PoseError },
    #[error("{path}: {source}")]
    Transcript { path: PathBuf, source: FeatureError },
    #[error("features: {0}")]
    Features(#[from] FeatureError),
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    /// Stable assignment from a session id. The trailing number decides
    /// when there is one (`i % 5 == 1` test, `i % 5 == 3` val), otherwise
    /// a hash of the id does.
    pub fn of_session(id: &str) -> Split {
        let digits: String = id.chars().rev().take_while(char::is_ascii_digit).collect();
        let key = match digits.chars().rev().collect::<String>().parse::<u64>() {
            Ok(i) => i,
            Err(_) => crate::features::providers::fnv1a(id.as_bytes()),
        };
        match key % 5 {
            1 => Split::Test,
            3 => Split::Val,
            _ => Split::Train,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Split::ALL.into_iter().find(|v| v.as_str() == s).ok_or_else(|| format!("unknown split `{s}`"))
    }
}

/// File locations of one participant.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentAssets {
    pub audio: PathBuf,
    pub transcript: PathBuf,
    pub motion: PathBuf,
    pub speaker: PathBuf,
}

impl AgentAssets {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            audio: dir.join(AUDIO_FILE),
            transcript: dir.join(TRANSCRIPT_FILE),
            motion: dir.join(MOTION_FILE),
            speaker: dir.join(SPEAKER_FILE),
        }
    }
}

/// Parsed assets of one participant, reconciled to the session length.
#[derive(Clone, Debug)]
pub struct AgentData {
    pub assets: AgentAssets,
    pub speaker_id: String,
    pub motion: Option<MotionSequence>,
    /// Mono samples covering exactly the session frames.
    pub audio: Vec<f32>,
    pub sample_rate: u32,
    pub words: Vec<TranscriptWord>,
}

#[derive(Clone, Debug)]
pub struct DyadicSession {
    pub id: String,
    pub split: Split,
    pub frames: usize,
    pub main: AgentData,
    pub interlocutor: AgentData,
}

impl DyadicSession {
    /// Main-agent and interlocutor features with exactly `frames` rows.
    pub fn features(
        &self,
        audio: &dyn AudioEmbeddingProvider,
        text: &dyn TextEmbeddingProvider,
    ) -> Result<(ClipFeatures, ClipFeatures), DatasetError> {
        let agent = |a: &AgentData| -> Result<ClipFeatures, DatasetError> {
            Ok(ClipFeatures {
                audio: extract_audio_features(audio, &a.audio, a.sample_rate, self.frames)?,
                text: extract_text_features(text, &a.words, self.frames)?,
                speaker: a.speaker_id.clone(),
            })
        };
        Ok((agent(&self.main)?, agent(&self.interlocutor)?))
    }
}

/// Sessions present under `root`, sorted by split then id.
pub fn list_sessions(root: &Path) -> Result<Vec<(Split, String)>, DatasetError> {
    let mut out = Vec::new();
    for split in Split::ALL {
        let dir = root.join(split.as_str());
        if !dir.is_dir() {
            continue;
        }
        let mut ids: Vec<String> = fs::read_dir(&dir)?
            .filter_map(Result::ok)
            .filter(|e| e.path().is_dir())
            .filter_map(|e| e.file_name().to_str().map(str::to_string))
            .collect();
        ids.sort();
        out.extend(ids.into_iter().map(|id| (split, id)));
    }
    Ok(out)
}

/// Reads a WAV file and averages its channels.
pub fn read_wav_mono(path: &Path) -> Result<(Vec<f32>, u32), DatasetError> {
    let asset_err = |e: hound::Error| DatasetError::Asset { path: path.to_path_buf(), message: e.to_string() };
    let reader = hound::WavReader::open(path).map_err(asset_err)?;
    let spec = reader.spec();
    let channels = usize::from(spec.channels.max(1));
    let interleaved: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Float => reader.into_samples::<f32>().collect::<Result<_, _>>().map_err(asset_err)?,
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f32;
            reader
                .into_samples::<i32>()
                .map(|v| v.map(|x| x as f32 * scale))
                .collect::<Result<_, _>>()
                .map_err(asset_err)?
        }
    };
    let mono = interleaved.chunks(channels).map(|c| c.iter().sum::<f32>() / c.len() as f32).collect();
    Ok((mono, spec.sample_rate))
}

/// Writes mono 16-bit PCM.
pub fn write_wav_mono(path: &Path, samples: &[f32], sample_rate: u32) -> Result<(), DatasetError> {
    let spec = hound::WavSpec { channels: 1, sample_rate, bits_per_sample: 16, sample_format: hound::SampleFormat::Int };
    let asset_err = |e: hound::Error| DatasetError::Asset { path: path.to_path_buf(), message: e.to_string() };
    let mut w = hound::WavWriter::create(path, spec).map_err(asset_err)?;
    for &v in samples {
        w.write_sample((v.clamp(-1.0, 1.0) * f32::from(i16::MAX)).round() as i16).map_err(asset_err)?;
    }
    w.finalize().map_err(asset_err)
}

fn require(path: &Path) -> Result<(), DatasetError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(DatasetError::Missing(path.to_path_buf()))
    }
}

fn check_gap(path: &Path, asset: f64, motion: f64) -> Result<(), DatasetError> {
    if (asset - motion).abs() > MAX_DURATION_GAP {
        return Err(DatasetError::Duration { path: path.to_path_buf(), asset, motion });
    }
    Ok(())
}

/// Parses a 30 fps BVH file into pose rows.
pub fn load_motion(path: &Path) -> Result<MotionSequence, DatasetError> {
    let text = fs::read_to_string(path)?;
    let raw = parse_bvh(&text).map_err(|source| DatasetError::Bvh { path: path.to_path_buf(), source })?;
    if (raw.fps() - FPS).abs() > FPS_TOLERANCE {
        return Err(DatasetError::Fps { path: path.to_path_buf(), fps: raw.fps() });
    }
    let mut seq = encode_pose(&raw).map_err(|source| DatasetError::Pose { path: path.to_path_buf(), source })?;
    seq.fps = FPS;
    Ok(seq)
}

/// Cuts or repeats the last frame so the sequence has `frames` rows.
fn fit_motion(mut seq: MotionSequence, frames: usize) -> MotionSequence {
    let n = seq.len();
    if n > frames {
        seq.poses = seq.poses.slice(s![..frames, ..]).to_owned();
    } else if n < frames && n > 0 {
        let last = seq.poses.row(n - 1).to_owned();
        seq.poses = Array2::from_shape_fn((frames, seq.poses.ncols()), |(i, c)| {
            if i < n {
                seq.poses[[i, c]]
            } else {
                last[c]
            }
        });
    }
    seq
}

fn load_agent(dir: &Path, motion_required: bool) -> Result<(AgentData, Option<f64>), DatasetError> {
    let assets = AgentAssets::in_dir(dir);
    require(&assets.audio)?;
    require(&assets.transcript)?;
    require(&assets.speaker)?;
    if motion_required {
        require(&assets.motion)?;
    }
    let motion = if assets.motion.is_file() { Some(load_motion(&assets.motion)?) } else { None };
    let (audio, sample_rate) = read_wav_mono(&assets.audio)?;
    let transcript = fs::read_to_string(&assets.transcript)?;
    let words = parse_transcript(&transcript)
        .map_err(|source| DatasetError::Transcript { path: assets.transcript.clone(), source })?;
    let speaker_id = fs::read_to_string(&assets.speaker)?.trim().to_string();
    if speaker_id.is_empty() {
        return Err(DatasetError::Asset { path: assets.speaker.clone(), message: "empty speaker id".into() });
    }
    let audio_s = audio.len() as f64 / f64::from(sample_rate.max(1));
    Ok((AgentData { assets, speaker_id, motion, audio, sample_rate, words }, Some(audio_s)))
}

fn reconcile(agent: &mut AgentData, frames: usize) -> Result<(), DatasetError> {
    let motion_s = frames as f64 / FPS;
    let audio_s = agent.audio.len() as f64 / f64::from(agent.sample_rate.max(1));
    check_gap(&agent.assets.audio, audio_s, motion_s)?;
    let required = (frames as f64 * samples_per_frame(agent.sample_rate)).round() as usize;
    agent.audio.resize(required, 0.0);
    if let Some(seq) = agent.motion.take() {
        check_gap(&agent.assets.motion, seq.len() as f64 / FPS, motion_s)?;
        agent.motion = Some(fit_motion(seq, frames));
    }
    Ok(())
}

/// Loads `<root>/<split>/<id>`. Train and validation sessions need
/// main-agent motion; elsewhere the frame count falls back to the audio.
pub fn load_session(root: &Path, id: &str) -> Result<DyadicSession, DatasetError> {
    let split = Split::ALL
        .into_iter()
        .find(|s| root.join(s.as_str()).join(id).is_dir())
        .ok_or_else(|| DatasetError::UnknownSession(id.to_string()))?;
    let dir = root.join(split.as_str()).join(id);
    let (mut main, main_audio_s) = load_agent(&dir.join(MAIN_AGENT), split != Split::Test)?;
    let (mut interlocutor, _) = load_agent(&dir.join(INTERLOCUTOR), false)?;
    let frames = match &main.motion {
        Some(m) => m.len(),
        None => (main_audio_s.unwrap_or(0.0) * FPS).floor() as usize,
    };
    if frames == 0 {
        return Err(DatasetError::Asset { path: dir, message: "session has no frames".into() });
    }
    reconcile(&mut main, frames)?;
    reconcile(&mut interlocutor, frames)?;
    Ok(DyadicSession { id: id.to_string(), split, frames, main, interlocutor })
}
