//! Pose representation: root translation followed by one 6D rotation per
//! joint, plus the standardizer, forward kinematics and smoothing that
//! operate on it.

pub mod kinematics;
pub mod rotation;
pub mod smoothing;

use std::path::Path;

use ndarray::{Array1, Array2, Array3, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bvh::{RawMotion, Skeleton};
pub use kinematics::FkPlan;
pub use rotation::{euler_to_matrix, gram_schmidt, matrix_to_euler, rotation6d};
pub use smoothing::{savgol_coefficients, smooth_motion, EdgeMode};

/// Standard-deviation floor used by [`Standardizer`].
pub const STD_FLOOR: f64 = 1e-8;

/// Frame rate of all pipeline data.
pub const FPS: f64 = 30.0;

#[derive(Debug, Error)]
pub enum PoseError {
    #[error("numerically degenerate 6D rotation: {0}")]
    Degenerate(String),
    #[error("joint `{0}` needs exactly three rotation channels")]
    RotationChannels(String),
    #[error("pose width {got} does not match skeleton ({expected})")]
    Width { expected: usize, got: usize },
    #[error("usage: {0}")]
    Usage(String),
    #[error("sequence too short for smoothing: {frames} frames < window {window}; skip smoothing")]
    TooShort { frames: usize, window: usize },
    #[error("invalid smoothing parameters: {0}")]
    SmoothingParams(String),
    #[error("standardizer I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("standardizer JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// Width of a pose row for `joints` joints.
pub fn pose_dim(joints: usize) -> usize {
    3 + 6 * joints
}

/// Frames of pose rows `[x, y, z, r_{0,1..6}, ..., r_{J-1,1..6}]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionSequence {
    /// N × (3 + 6J).
    pub poses: Array2<f64>,
    pub skeleton: Skeleton,
    pub fps: f64,
    pub standardized: bool,
}

impl MotionSequence {
    pub fn new(poses: Array2<f64>, skeleton: Skeleton, fps: f64) -> Result<Self, PoseError> {
        let expected = pose_dim(skeleton.len());
        if poses.ncols() != expected {
            return Err(PoseError::Width { expected, got: poses.ncols() });
        }
        Ok(Self { poses, skeleton, fps, standardized: false })
    }

    pub fn len(&self) -> usize {
        self.poses.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.nrows() == 0
    }

    pub fn joint_count(&self) -> usize {
        self.skeleton.len()
    }
}

fn rotation_axes(skeleton: &Skeleton) -> Result<Vec<[usize; 3]>, PoseError> {
    skeleton
        .joints
        .iter()
        .map(|j| {
            j.rotation_order()
                .map(|o| [o[0].axis(), o[1].axis(), o[2].axis()])
                .ok_or_else(|| PoseError::RotationChannels(j.name.clone()))
        })
        .collect()
}

/// Converts BVH channels to pose rows.
pub fn encode_pose(raw: &RawMotion) -> Result<MotionSequence, PoseError> {
    let skel = &raw.skeleton;
    let axes = rotation_axes(skel)?;
    let offsets = skel.channel_offsets();
    let mut poses = Array2::zeros((raw.frame_count(), pose_dim(skel.len())));
    for (n, frame) in raw.frames.rows().into_iter().enumerate() {
        for (j, joint) in skel.joints.iter().enumerate() {
            let mut angles = [0.0; 3];
            let mut k = 0;
            for (c, ch) in joint.channels.iter().enumerate() {
                let value = frame[offsets[j] + c];
                if ch.is_rotation() {
                    angles[k] = value;
                    k += 1;
                } else if j == 0 {
                    poses[[n, ch.axis()]] = value;
                }
            }
            let six = rotation6d(&euler_to_matrix(angles, axes[j]));
            for (i, v) in six.iter().enumerate() {
                poses[[n, 3 + 6 * j + i]] = *v;
            }
        }
    }
    Ok(MotionSequence { poses, skeleton: skel.clone(), fps: 1.0 / raw.frame_time, standardized: false })
}

/// Converts pose rows back to BVH channels. Non-root position channels are
/// filled with the joint offset.
pub fn decode_pose(seq: &MotionSequence) -> Result<RawMotion, PoseError> {
    if seq.standardized {
        return Err(PoseError::Usage("decode_pose needs a de-standardized sequence".into()));
    }
    let skel = &seq.skeleton;
    let axes = rotation_axes(skel)?;
    let offsets = skel.channel_offsets();
    let mut frames = Array2::zeros((seq.len(), skel.channel_count()));
    for (n, pose) in seq.poses.rows().into_iter().enumerate() {
        for (j, joint) in skel.joints.iter().enumerate() {
            let six: [f64; 6] = std::array::from_fn(|i| pose[3 + 6 * j + i]);
            let angles = matrix_to_euler(&gram_schmidt(&six)?, axes[j]);
            let mut k = 0;
            for (c, ch) in joint.channels.iter().enumerate() {
                frames[[n, offsets[j] + c]] = if ch.is_rotation() {
                    k += 1;
                    angles[k - 1]
                } else if j == 0 {
                    pose[ch.axis()]
                } else {
                    joint.offset[ch.axis()]
                };
            }
        }
    }
    Ok(RawMotion { skeleton: skel.clone(), frame_time: 1.0 / seq.fps, frames })
}

/// N × J × 3 joint positions of a de-standardized sequence.
pub fn forward_kinematics(seq: &MotionSequence) -> Result<Array3<f64>, PoseError> {
    if seq.standardized {
        return Err(PoseError::Usage("forward_kinematics needs a de-standardized sequence".into()));
    }
    let plan = FkPlan::new(&seq.skeleton);
    let flat = plan.positions(seq.poses.view());
    Ok(flat
        .into_shape_with_order((seq.len(), seq.joint_count(), 3))
        .expect("FK output has 3J columns"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// Per-dimension mean and standard deviation of training poses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub dims: usize,
}

impl Standardizer {
    /// Fits on the frames of `sequences` (population statistics).
    pub fn fit<'a>(sequences: impl IntoIterator<Item = &'a MotionSequence>) -> Result<Self, PoseError> {
        let mut rows: Vec<Array2<f64>> = Vec::new();
        for s in sequences {
            if s.standardized {
                return Err(PoseError::Usage("cannot fit on standardized data".into()));
            }
            rows.push(s.poses.clone());
        }
        let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
        if views.is_empty() {
            return Err(PoseError::Usage("no sequences to fit".into()));
        }
        let all = ndarray::concatenate(Axis(0), &views)
            .map_err(|_| PoseError::Usage("sequences have different widths".into()))?;
        if all.nrows() == 0 {
            return Err(PoseError::Usage("no frames to fit".into()));
        }
        Ok(Self::fit_matrix(&all))
    }

    pub fn fit_matrix(data: &Array2<f64>) -> Self {
        let mean = data.mean_axis(Axis(0)).expect("non-empty");
        let std = data.std_axis(Axis(0), 0.0).mapv(|s| s.max(STD_FLOOR));
        Self { dims: mean.len(), mean: mean.to_vec(), std: std.to_vec() }
    }

    pub fn identity(dims: usize) -> Self {
        Self { mean: vec![0.0; dims], std: vec![1.0; dims], dims }
    }

    pub fn mean_row(&self) -> Array2<f64> {
        Array1::from(self.mean.clone()).insert_axis(Axis(0))
    }

    pub fn std_row(&self) -> Array2<f64> {
        Array1::from(self.std.clone()).insert_axis(Axis(0))
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        (x - &self.mean_row()) / &self.std_row()
    }

    pub fn inverse(&self, x: &Array2<f64>) -> Array2<f64> {
        x * &self.std_row() + &self.mean_row()
    }

    pub fn save(&self, path: &Path) -> Result<(), PoseError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, PoseError> {
        let s: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if s.mean.len() != s.dims || s.std.len() != s.dims {
            return Err(PoseError::Usage(format!("standardizer dims {} disagree with vectors", s.dims)));
        }
        Ok(s)
    }
}

/// Applies or removes standardization, flipping the `standardized` flag.
pub fn standardize(seq: &MotionSequence, s: &Standardizer, direction: Direction) -> Result<MotionSequence, PoseError> {
    if seq.poses.ncols() != s.dims {
        return Err(PoseError::Width { expected: s.dims, got: seq.poses.ncols() });
    }
    let poses = match (direction, seq.standardized) {
        (Direction::Forward, false) => s.forward(&seq.poses),
        (Direction::Inverse, true) => s.inverse(&seq.poses),
        (Direction::Forward, true) => return Err(PoseError::Usage("sequence is already standardized".into())),
        (Direction::Inverse, false) => return Err(PoseError::Usage("sequence is not standardized".into())),
    };
    Ok(MotionSequence { poses, skeleton: seq.skeleton.clone(), fps: seq.fps, standardized: direction == Direction::Forward })
}
