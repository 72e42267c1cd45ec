use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;

use gesture_forge::dataset::Split;
use gesture_forge::generator::{
    save_checkpoint, train as fit, GestureModel, TrainOptions, TrainingClip, TrainingRecord,
};
use gesture_forge::pose::{standardize, Direction, Standardizer};

use super::{load_sessions, pool, session_features};
use crate::config::{RunConfig, RUN_CONFIG_FILE};

pub const TRAIN_REPORT: &str = "train_report.json";

/// Trains on the train split and writes a checkpoint to `out`.
pub fn train(cfg: &RunConfig, features: Option<&Path>, out: &Path, jobs: usize) -> Result<()> {
    let root = cfg.dataset()?;
    let pool = pool(jobs)?;
    let sessions = load_sessions(root, Some(Split::Train), &pool)?;
    if sessions.is_empty() {
        bail!("dataset: no training sessions under {}", root.display());
    }
    let motions: Vec<_> = sessions
        .iter()
        .map(|s| s.main.motion.clone().with_context(|| format!("dataset: session {} has no main-agent motion", s.id)))
        .collect::<Result<_>>()?;
    let skeleton = motions[0].skeleton.clone();
    if let Some((s, _)) = sessions.iter().zip(&motions).find(|(_, m)| m.skeleton != skeleton) {
        bail!("dataset: session {} uses a different skeleton", s.id);
    }
    let standardizer = Standardizer::fit(&motions).context("pose")?;
    let providers = cfg.providers.build(cfg.seed)?;
    let clips: Vec<TrainingClip> = pool.install(|| {
        sessions
            .par_iter()
            .zip(motions.par_iter())
            .map(|(s, m)| -> Result<TrainingClip> {
                let (main, inter) = session_features(s, &providers, features)?;
                let target = standardize(m, &standardizer, Direction::Forward).context("pose")?.poses;
                Ok(TrainingClip { id: s.id.clone(), main, inter, target })
            })
            .collect::<Result<_>>()
    })?;
    let speakers: BTreeSet<String> = sessions.iter().map(|s| s.main.speaker_id.clone()).collect();
    let config = cfg.generator.generator_config(standardizer.dims, cfg.seed);
    let mut model = GestureModel::new(
        config,
        cfg.fusion,
        cfg.providers.audio_dim,
        cfg.providers.text_dim,
        speakers,
        standardizer,
        skeleton,
    )
    .context("generator")?;
    let opts = TrainOptions {
        epochs: cfg.epochs,
        loss_weights: cfg.loss_weights,
        optimizer: cfg.optimizer,
        shuffle: cfg.shuffle,
    };
    let report = fit(&mut model, &clips, &opts).context("generator: training")?;
    if let Some(last) = report.loss_curve.last() {
        log::info!("trained {} epochs, final loss {last:.6}", report.loss_curve.len());
    }
    let record = TrainingRecord {
        loss_weights: cfg.loss_weights,
        optimizer: cfg.optimizer,
        epochs: report.loss_curve.len(),
        loss_curve: report.loss_curve.clone(),
    };
    save_checkpoint(&model, &record, out).context("generator: checkpoint")?;
    cfg.save(&out.join(RUN_CONFIG_FILE))?;
    fs::write(out.join(TRAIN_REPORT), serde_json::to_string_pretty(&report)?)?;
    Ok(())
}
