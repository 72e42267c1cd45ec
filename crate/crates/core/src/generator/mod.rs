//! Speech-to-gesture generator: model, loss, training and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod loss;
pub mod model;
pub mod system;
pub mod train;

use thiserror::Error;

use crate::bvh::BvhError;
use crate::features::FeatureError;
use crate::fusion::FusionError;
use crate::pose::PoseError;
pub use checkpoint::{load_checkpoint, save_checkpoint, Manifest, TrainingRecord};
pub use config::{AdamWConfig, GeneratorConfig, LossWeights, LrSchedule};
pub use loss::{composite_loss, LossBreakdown};
pub use model::{Generator, SegmentMemory};
pub use system::{invocation_count, ClipFeatures, GenerationStats, GestureModel};
pub use train::{train, AdamW, TrainOptions, TrainReport, TrainingClip};

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("feature width mismatch: model expects {expected}, got main {main} and interlocutor {inter}")]
    Width { expected: usize, main: usize, inter: usize },
    #[error("segment rows: main {main}, interlocutor {inter}, segment length {segment_len}")]
    SegmentShape { main: usize, inter: usize, segment_len: usize },
    #[error("memory does not match the model layout")]
    Memory,
    #[error("no frames to process")]
    Empty,
    #[error("loss: {0}")]
    Loss(String),
    #[error("features: {0}")]
    Features(String),
    #[error("non-finite loss at epoch {epoch}, clip `{clip}`, segment {segment}: {breakdown:?}")]
    NonFinite { epoch: usize, clip: String, segment: usize, breakdown: LossBreakdown },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Pose(#[from] PoseError),
    #[error(transparent)]
    Bvh(#[from] BvhError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
