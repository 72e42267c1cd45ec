//! Procedural dyadic sessions whose motion follows the word stream.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{write_wav_mono, AgentAssets, DatasetError, Split, INTERLOCUTOR, MAIN_AGENT};
use crate::bvh::{serialize_bvh, Channel, Joint, RawMotion, Skeleton};
use crate::features::providers::fnv1a;
use crate::features::{write_transcript, TranscriptWord};
use crate::pose::FPS;

pub const SYNTHETIC_MANIFEST: &str = "synthetic.json";
pub const SAMPLE_RATE: u32 = 16_000;

/// Rise time of a trigger gesture. Peak wrist speed falls half-way.
pub const TRIGGER_RISE_S: f64 = 0.134;
const TRIGGER_HOLD_S: f64 = 0.45;
const TRIGGER_FALL_S: f64 = 0.6;
/// Minimum spacing between two triggers of one speaker.
pub const TRIGGER_GAP_S: f64 = 1.6;
const TRIGGER_PROB: f64 = 0.3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_sessions: usize,
    pub duration_s: f64,
    pub n_speakers: usize,
    /// Filler words.
    pub vocabulary: Vec<String>,
    /// Words that raise the right arm.
    pub triggers: Vec<String>,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(seed: u64) -> Self {
        let words = |w: &[&str]| w.iter().map(|s| s.to_string()).collect();
        Self {
            n_sessions: 20,
            duration_s: 10.0,
            n_speakers: 3,
            vocabulary: words(&["so", "we", "went", "to", "the", "market", "and", "then", "maybe", "you", "know", "it"]),
            triggers: words(&["look", "huge"]),
            seed,
        }
    }

    pub fn frames(&self) -> usize {
        (self.duration_s * FPS).round() as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSession {
    pub id: String,
    pub split: Split,
    pub main_speaker: String,
    pub interlocutor_speaker: String,
    /// Start times of trigger words spoken by the main agent.
    pub main_triggers: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticManifest {
    pub spec: SyntheticSpec,
    pub sessions: Vec<SyntheticSession>,
}

pub const RIGHT_WRIST: &str = "RightWrist";

/// Ten-joint upper-body skeleton, arms hanging, Y up, centimetres.
pub fn synthetic_skeleton() -> Skeleton {
    let rot = vec![Channel::Zrotation, Channel::Xrotation, Channel::Yrotation];
    let mut root = vec![Channel::Xposition, Channel::Yposition, Channel::Zposition];
    root.extend(rot.iter().copied());
    let joint = |name: &str, parent: Option<usize>, offset: [f64; 3], end_site: Option<[f64; 3]>| Joint {
        name: name.into(),
        parent,
        offset,
        channels: if parent.is_none() { root.clone() } else { rot.clone() },
        end_site,
    };
    Skeleton {
        joints: vec![
            joint("Hips", None, [0.0; 3], None),
            joint("Spine", Some(0), [0.0, 10.0, 0.0], None),
            joint("Neck", Some(1), [0.0, 40.0, 0.0], None),
            joint("Head", Some(2), [0.0, 10.0, 0.0], Some([0.0, 15.0, 0.0])),
            joint("RightShoulder", Some(2), [-15.0, -2.0, 0.0], None),
            joint("RightElbow", Some(4), [0.0, -28.0, 0.0], None),
            joint(RIGHT_WRIST, Some(5), [0.0, -25.0, 0.0], Some([0.0, -8.0, 0.0])),
            joint("LeftShoulder", Some(2), [15.0, -2.0, 0.0], None),
            joint("LeftElbow", Some(7), [0.0, -28.0, 0.0], None),
            joint("LeftWrist", Some(8), [0.0, -25.0, 0.0], Some([0.0, -8.0, 0.0])),
        ],
    }
}

fn ms(t: f64) -> f64 {
    (t * 1000.0).round() / 1000.0
}

/// Word timings rounded to milliseconds, as written to the transcript.
fn word_stream(spec: &SyntheticSpec, rng: &mut ChaCha8Rng, with_triggers: bool) -> Vec<TranscriptWord> {
    let duration = spec.frames() as f64 / FPS;
    let mut words = Vec::new();
    let mut t = rng.random_range(0.2..0.6);
    let mut last_trigger = f64::NEG_INFINITY;
    while t < duration - 0.5 {
        let len = rng.random_range(0.25..0.45);
        let roll: f64 = rng.random();
        let trigger_ok = with_triggers
            && !spec.triggers.is_empty()
            && t - last_trigger >= TRIGGER_GAP_S
            && t + TRIGGER_RISE_S + TRIGGER_HOLD_S + TRIGGER_FALL_S <= duration;
        let text = if trigger_ok && roll < TRIGGER_PROB {
            last_trigger = ms(t);
            spec.triggers[rng.random_range(0..spec.triggers.len())].clone()
        } else if spec.vocabulary.is_empty() {
            "uh".to_string()
        } else {
            spec.vocabulary[rng.random_range(0..spec.vocabulary.len())].clone()
        };
        words.push(TranscriptWord::new(text, ms(t), ms(t + len)));
        t += len + rng.random_range(0.08..0.35);
        if rng.random::<f64>() < 0.1 {
            t += 0.8;
        }
    }
    words
}

fn raised_cosine(u: f64) -> f64 {
    if u <= 0.0 {
        0.0
    } else if u >= 1.0 {
        1.0
    } else {
        0.5 * (1.0 - (PI * u).cos())
    }
}

/// Arm raise envelope in [0, 1] for a trigger starting at `start`.
fn trigger_envelope(t: f64, start: f64) -> f64 {
    let rise = raised_cosine((t - start) / TRIGGER_RISE_S);
    let fall = raised_cosine((t - start - TRIGGER_RISE_S - TRIGGER_HOLD_S) / TRIGGER_FALL_S);
    rise * (1.0 - fall)
}

/// Small elbow flick over the first 0.3 s of a word.
fn beat_envelope(t: f64, start: f64) -> f64 {
    let u = (t - start) / 0.3;
    if (0.0..1.0).contains(&u) {
        (PI * u).sin().powi(2)
    } else {
        0.0
    }
}

fn synth_motion(spec: &SyntheticSpec, words: &[TranscriptWord], speaker: usize) -> RawMotion {
    let skeleton = synthetic_skeleton();
    let offsets = skeleton.channel_offsets();
    let n = spec.frames();
    let triggers: Vec<f64> = words.iter().filter(|w| spec.triggers.contains(&w.text)).map(|w| w.start).collect();
    let beats: Vec<f64> = words.iter().filter(|w| !spec.triggers.contains(&w.text)).map(|w| w.start).collect();
    let style = 1.0 + 0.1 * speaker as f64;
    let phase = speaker as f64 * 1.3;
    let mut frames = Array2::zeros((n, skeleton.channel_count()));
    for f in 0..n {
        let t = f as f64 / FPS;
        let raise = triggers.iter().map(|&s| trigger_envelope(t, s)).fold(0.0, f64::max);
        let beat = beats.iter().map(|&s| beat_envelope(t, s)).fold(0.0, f64::max);
        let mut row = frames.row_mut(f);
        row[1] = 95.0;
        // Channel order per joint is Z, X, Y.
        row[offsets[1]] = 2.0 * (2.0 * PI * t / 4.0 + phase).sin();
        row[offsets[3] + 1] = 4.0 * beat;
        row[offsets[4]] = -70.0 * style * raise;
        row[offsets[5] + 1] = -50.0 * raise;
        row[offsets[7]] = 5.0 + 3.0 * beat;
        row[offsets[8] + 1] = -20.0 * style * beat;
    }
    RawMotion { skeleton, frame_time: 1.0 / FPS, frames }
}

/// Amplitude-modulated noise with a louder burst at each trigger onset.
fn synth_audio(spec: &SyntheticSpec, words: &[TranscriptWord], rng: &mut ChaCha8Rng) -> Vec<f32> {
    let sr = f64::from(SAMPLE_RATE);
    let n = (spec.frames() as f64 / FPS * sr).round() as usize;
    (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            let mut env = 0.01;
            for w in words {
                if t >= w.start && t < w.end {
                    let u = (t - w.start) / (w.end - w.start);
                    env += 0.15 * (0.6 + 0.4 * (PI * u).sin());
                }
                if spec.triggers.contains(&w.text) && t >= w.start && t < w.start + 0.1 {
                    env += 0.6;
                }
            }
            let noise: f64 = rng.random_range(-1.0..1.0);
            (env * noise) as f32
        })
        .collect()
}

fn agent_rng(seed: u64, session: usize, agent: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(fnv1a(format!("{seed}/{session}/{agent}").as_bytes()))
}

fn write_agent(
    dir: &Path,
    spec: &SyntheticSpec,
    words: &[TranscriptWord],
    speaker: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(), DatasetError> {
    fs::create_dir_all(dir)?;
    let assets = AgentAssets::in_dir(dir);
    let bvh = serialize_bvh(&synth_motion(spec, words, speaker))
        .map_err(|source| DatasetError::Bvh { path: assets.motion.clone(), source })?;
    fs::write(&assets.motion, bvh)?;
    write_wav_mono(&assets.audio, &synth_audio(spec, words, rng), SAMPLE_RATE)?;
    fs::write(&assets.transcript, write_transcript(words))?;
    fs::write(&assets.speaker, format!("spk{speaker}\n"))?;
    Ok(())
}

/// Writes `spec.n_sessions` sessions under `out` plus a manifest listing
/// every main-agent trigger.
pub fn make_synthetic(spec: &SyntheticSpec, out: &Path) -> Result<SyntheticManifest, DatasetError> {
    let n_speakers = spec.n_speakers.max(1);
    let mut sessions = Vec::with_capacity(spec.n_sessions);
    for i in 0..spec.n_sessions {
        let id = format!("session{i:03}");
        let split = Split::of_session(&id);
        let dir = out.join(split.as_str()).join(&id);
        let (main_spk, inter_spk) = (i % n_speakers, (i + 1) % n_speakers);

        let mut rng = agent_rng(spec.seed, i, MAIN_AGENT);
        let words = word_stream(spec, &mut rng, true);
        write_agent(&dir.join(MAIN_AGENT), spec, &words, main_spk, &mut rng)?;

        let mut irng = agent_rng(spec.seed, i, INTERLOCUTOR);
        let inter_words = word_stream(spec, &mut irng, false);
        write_agent(&dir.join(INTERLOCUTOR), spec, &inter_words, inter_spk, &mut irng)?;

        sessions.push(SyntheticSession {
            id,
            split,
            main_speaker: format!("spk{main_spk}"),
            interlocutor_speaker: format!("spk{inter_spk}"),
            main_triggers: words.iter().filter(|w| spec.triggers.contains(&w.text)).map(|w| w.start).collect(),
        });
    }
    let manifest = SyntheticManifest { spec: spec.clone(), sessions };
    fs::create_dir_all(out)?;
    fs::write(out.join(SYNTHETIC_MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}
