//! Audio onsets, motion beats and their alignment score.

use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::features::samples_per_frame;
use crate::pose::kinematics::FkPlan;
use crate::pose::smoothing::{savgol_filter, EdgeMode};
use crate::pose::{MotionSequence, FPS};

pub const DEFAULT_SIGMA: f64 = 0.1;
const LOG_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BeatSource {
    Audio,
    Motion,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeatSequence {
    /// Strictly increasing, nonnegative seconds.
    pub times: Vec<f64>,
    pub source: BeatSource,
}

impl BeatSequence {
    pub fn new(mut times: Vec<f64>, source: BeatSource) -> Self {
        times.retain(|t| t.is_finite() && *t >= 0.0);
        times.sort_by(f64::total_cmp);
        times.dedup();
        Self { times, source }
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }
}

/// Onset strength per 1/30 s hop: rectified first difference of log RMS.
pub fn onset_envelope(samples: &[f32], sample_rate: u32) -> Vec<f64> {
    let hop = samples_per_frame(sample_rate);
    let frames = (samples.len() as f64 / hop).floor() as usize;
    let log_rms: Vec<f64> = (0..frames)
        .map(|f| {
            let a = (f as f64 * hop).round() as usize;
            let b = (((f + 1) as f64 * hop).round() as usize).min(samples.len());
            let w = &samples[a..b];
            let ms = w.iter().map(|v| f64::from(*v).powi(2)).sum::<f64>() / w.len().max(1) as f64;
            (ms.sqrt() + LOG_EPS).ln()
        })
        .collect();
    let mut env = vec![0.0; frames];
    for f in 1..frames {
        env[f] = (log_rms[f] - log_rms[f - 1]).max(0.0);
    }
    env
}

/// Local maxima of the onset envelope above mean + 1 std. A beat at hop
/// `k` is reported at `k / 30` s, the start of the hop where energy rose.
pub fn extract_audio_beats(samples: &[f32], sample_rate: u32) -> BeatSequence {
    let env = onset_envelope(samples, sample_rate);
    if env.len() < 3 {
        return BeatSequence::new(Vec::new(), BeatSource::Audio);
    }
    let n = env.len() as f64;
    let mean = env.iter().sum::<f64>() / n;
    let std = (env.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let threshold = mean + std;
    let times = (0..env.len())
        .filter(|&k| {
            let left = if k > 0 { env[k - 1] } else { f64::NEG_INFINITY };
            let right = if k + 1 < env.len() { env[k + 1] } else { f64::NEG_INFINITY };
            env[k] > threshold && env[k] >= left && env[k] > right
        })
        .map(|k| k as f64 / FPS)
        .collect();
    BeatSequence::new(times, BeatSource::Audio)
}

/// Joints whose names contain "wrist", or the end effectors when none do.
pub fn tracked_joints(seq: &MotionSequence) -> Vec<usize> {
    let wrists: Vec<usize> = seq
        .skeleton
        .joints
        .iter()
        .enumerate()
        .filter(|(_, j)| j.name.to_ascii_lowercase().contains("wrist"))
        .map(|(i, _)| i)
        .collect();
    if wrists.is_empty() {
        seq.skeleton.leaves()
    } else {
        wrists
    }
}

/// Mean speed of `joints` between consecutive frames, in units per second.
/// Entry `k` covers frames `k` and `k + 1`.
pub fn joint_speed(seq: &MotionSequence, joints: &[usize]) -> Result<Vec<f64>, MetricsError> {
    if seq.standardized {
        return Err(MetricsError::Usage("beat extraction expects de-standardized motion".into()));
    }
    let pos = FkPlan::new(&seq.skeleton).positions(seq.poses.view());
    let n = seq.len();
    Ok((0..n.saturating_sub(1))
        .map(|k| {
            joints
                .iter()
                .map(|&j| {
                    (0..3).map(|a| (pos[[k + 1, 3 * j + a]] - pos[[k, 3 * j + a]]).powi(2)).sum::<f64>().sqrt() * seq.fps
                })
                .sum::<f64>()
                / joints.len().max(1) as f64
        })
        .collect())
}

/// Indices of interior local minima. Runs of values within `tol` of each
/// other count as one plateau; a plateau is a minimum when both neighbouring
/// runs are higher, and it is reported at its center.
pub fn local_minima(curve: &[f64], tol: f64) -> Vec<f64> {
    let mut runs: Vec<(usize, usize, f64)> = Vec::new();
    for (i, &v) in curve.iter().enumerate() {
        match runs.last_mut() {
            Some((_, end, level)) if (v - *level).abs() <= tol => *end = i,
            _ => runs.push((i, i, v)),
        }
    }
    runs.windows(3)
        .filter(|w| w[1].2 < w[0].2 && w[1].2 < w[2].2)
        .map(|w| (w[1].0 + w[1].1) as f64 / 2.0)
        .collect()
}

/// Local minima of the smoothed speed of the tracked joints.
pub fn extract_motion_beats(seq: &MotionSequence) -> Result<BeatSequence, MetricsError> {
    let joints = tracked_joints(seq);
    let mut speed = joint_speed(seq, &joints)?;
    if speed.len() < 3 {
        return Ok(BeatSequence::new(Vec::new(), BeatSource::Motion));
    }
    if speed.len() >= 9 {
        speed = savgol_filter(&speed, 9, 2, EdgeMode::Interp)?;
    }
    let scale = speed.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-9 * (1.0 + scale);
    let times = local_minima(&speed, tol).into_iter().map(|k| (k + 0.5) / seq.fps).collect();
    Ok(BeatSequence::new(times, BeatSource::Motion))
}

/// Mean over motion beats of `exp(−d² / 2σ²)`, `d` the distance to the
/// nearest audio beat.
pub fn beat_align(motion: &BeatSequence, audio: &BeatSequence, sigma: f64) -> Result<f64, MetricsError> {
    if motion.is_empty() {
        return Err(MetricsError::NoMotionBeats);
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(MetricsError::Usage(format!("sigma must be positive, got {sigma}")));
    }
    if audio.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = motion
        .times
        .iter()
        .map(|&t| {
            let d2 = audio.times.iter().map(|&a| (t - a).powi(2)).fold(f64::INFINITY, f64::min);
            (-d2 / (2.0 * sigma * sigma)).exp()
        })
        .sum();
    Ok(total / motion.len() as f64)
}
