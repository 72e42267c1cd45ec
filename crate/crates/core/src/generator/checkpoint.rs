//! Checkpoint directories: manifest, raw weights, standardizer, speaker
//! table and skeleton.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::system::GestureModel;
use super::{AdamWConfig, GeneratorConfig, GeneratorError, LossWeights};
use crate::bvh::{parse_bvh, serialize_bvh, RawMotion};
use crate::features::SpeakerTable;
use crate::fusion::FusionConfig;
use crate::pose::{Standardizer, FPS};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const WEIGHTS_FILE: &str = "weights.bin";
pub const STANDARDIZER_FILE: &str = "standardizer.json";
pub const SPEAKER_FILE: &str = "speaker_table.json";
pub const SKELETON_FILE: &str = "skeleton.bvh";
const FORMAT: &str = "gesture-forge-checkpoint/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub generator: GeneratorConfig,
    pub fusion: FusionConfig,
    pub audio_dim: usize,
    pub text_dim: usize,
    pub loss_weights: LossWeights,
    pub optimizer: AdamWConfig,
    pub epochs: usize,
    pub seed: u64,
    pub loss_curve: Vec<f64>,
    pub parameters: Vec<ParamEntry>,
}

/// Training metadata recorded alongside the weights.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingRecord {
    pub loss_weights: LossWeights,
    pub optimizer: AdamWConfig,
    pub epochs: usize,
    pub loss_curve: Vec<f64>,
}

pub fn save_checkpoint(model: &GestureModel, record: &TrainingRecord, dir: &Path) -> Result<Manifest, GeneratorError> {
    fs::create_dir_all(dir)?;
    let parameters = model
        .store
        .ids()
        .map(|id| {
            let (rows, cols) = model.store.get(id).dim();
            ParamEntry { name: model.store.name(id).to_string(), rows, cols }
        })
        .collect();
    let manifest = Manifest {
        format: FORMAT.into(),
        generator: model.config().clone(),
        fusion: model.fusion.config,
        audio_dim: model.fusion.audio_dim,
        text_dim: model.fusion.text_dim,
        loss_weights: record.loss_weights,
        optimizer: record.optimizer,
        epochs: record.epochs,
        seed: model.config().seed,
        loss_curve: record.loss_curve.clone(),
        parameters,
    };
    let bytes: Vec<u8> = model.store.flatten().iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(dir.join(WEIGHTS_FILE), bytes)?;
    model.standardizer.save(&dir.join(STANDARDIZER_FILE))?;
    model.speaker_table().save(&dir.join(SPEAKER_FILE))?;
    let skeleton = RawMotion {
        skeleton: model.skeleton.clone(),
        frame_time: 1.0 / FPS,
        frames: ndarray::Array2::zeros((0, model.skeleton.channel_count())),
    };
    fs::write(dir.join(SKELETON_FILE), serialize_bvh(&skeleton)?)?;
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn load_checkpoint(dir: &Path) -> Result<(GestureModel, Manifest), GeneratorError> {
    let read = |name: &str| {
        fs::read(dir.join(name)).map_err(|e| GeneratorError::Checkpoint(format!("{}: {e}", dir.join(name).display())))
    };
    let manifest: Manifest = serde_json::from_slice(&read(MANIFEST_FILE)?)?;
    if manifest.format != FORMAT {
        return Err(GeneratorError::Checkpoint(format!("unsupported checkpoint format `{}`", manifest.format)));
    }
    let standardizer = Standardizer::load(&dir.join(STANDARDIZER_FILE))?;
    let table = SpeakerTable::load(&dir.join(SPEAKER_FILE))?;
    let skeleton_text = String::from_utf8(read(SKELETON_FILE)?)
        .map_err(|_| GeneratorError::Checkpoint("skeleton file is not UTF-8".into()))?;
    let skeleton = parse_bvh(&skeleton_text)?.skeleton;
    let mut labels: Vec<(usize, String)> = table.id_to_index.iter().map(|(k, v)| (*v, k.clone())).collect();
    labels.sort();
    if labels.iter().enumerate().any(|(i, (idx, _))| *idx != i + 1) {
        return Err(GeneratorError::Checkpoint("speaker indices are not contiguous".into()));
    }
    let mut model = GestureModel::new(
        manifest.generator.clone(),
        manifest.fusion.mode,
        manifest.audio_dim,
        manifest.text_dim,
        labels.into_iter().map(|(_, l)| l),
        standardizer,
        skeleton,
    )?;
    let layout: Vec<ParamEntry> = model
        .store
        .ids()
        .map(|id| {
            let (rows, cols) = model.store.get(id).dim();
            ParamEntry { name: model.store.name(id).to_string(), rows, cols }
        })
        .collect();
    if layout != manifest.parameters {
        return Err(GeneratorError::Checkpoint("parameter layout differs from the manifest".into()));
    }
    let bytes = read(WEIGHTS_FILE)?;
    if bytes.len() % 8 != 0 {
        return Err(GeneratorError::Checkpoint("weights blob is truncated".into()));
    }
    let flat: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    model.store.load_flat(&flat).map_err(GeneratorError::Checkpoint)?;
    Ok((model, manifest))
}
