use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use gesture_forge::bvh::serialize_bvh;
use gesture_forge::dataset::Split;
use gesture_forge::generator::checkpoint::WEIGHTS_FILE;
use gesture_forge::generator::load_checkpoint;
use gesture_forge::pose::decode_pose;

use super::{load_sessions, pool, session_features, sha256_files};
use crate::config::{ProviderConfig, RunConfig, PROVIDERS_ENV, RUN_CONFIG_FILE};

pub const GENERATION_LOG: &str = "generation_log.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipLog {
    pub session: String,
    pub frames: usize,
    pub invocations: usize,
    pub smoothed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationLog {
    pub checkpoint_sha256: String,
    pub system: String,
    pub segment_len: usize,
    pub clips: Vec<ClipLog>,
}

/// Provider settings stored with the checkpoint, with the manifest's
/// dimensions taking precedence.
fn checkpoint_providers(dir: &Path, audio_dim: usize, text_dim: usize) -> Result<(ProviderConfig, u64, Option<std::path::PathBuf>)> {
    let path = dir.join(RUN_CONFIG_FILE);
    let (mut providers, seed, dataset) = if path.is_file() {
        let run = RunConfig::load(&path).with_context(|| format!("checkpoint: {}", path.display()))?;
        (run.providers, run.seed, run.dataset)
    } else {
        (ProviderConfig::default(), 0, None)
    };
    providers.audio_dim = audio_dim;
    providers.text_dim = text_dim;
    if let Ok(v) = std::env::var(PROVIDERS_ENV) {
        providers.kind = v.parse()?;
    }
    Ok((providers, seed, dataset))
}

/// Writes `<out>/<session>.bvh` for every session of `split`.
pub fn generate(
    checkpoint: &Path,
    dataset: Option<&Path>,
    features: Option<&Path>,
    split: Split,
    out: &Path,
    jobs: usize,
) -> Result<()> {
    let (model, manifest) = load_checkpoint(checkpoint).context("generator: loading checkpoint")?;
    let (provider_cfg, seed, stored_dataset) = checkpoint_providers(checkpoint, manifest.audio_dim, manifest.text_dim)?;
    let root = match (dataset, stored_dataset.as_deref()) {
        (Some(d), _) => d.to_path_buf(),
        (None, Some(d)) => d.to_path_buf(),
        (None, None) => return Err(crate::UsageError("no dataset: pass --dataset".into()).into()),
    };
    let pool = pool(jobs)?;
    let sessions = load_sessions(&root, Some(split), &pool)?;
    if sessions.is_empty() {
        bail!("dataset: no {split} sessions under {}", root.display());
    }
    let providers = provider_cfg.build(seed)?;
    fs::create_dir_all(out)?;
    let clips: Vec<ClipLog> = pool.install(|| {
        sessions
            .par_iter()
            .map(|s| -> Result<ClipLog> {
                let (main, inter) = session_features(s, &providers, features)?;
                let (motion, stats) =
                    model.generate_clip(&main, &inter).with_context(|| format!("generator: session {}", s.id))?;
                let raw = decode_pose(&motion).context("pose")?;
                let path = out.join(format!("{}.bvh", s.id));
                fs::write(&path, serialize_bvh(&raw).context("bvh")?)?;
                Ok(ClipLog { session: s.id.clone(), frames: stats.frames, invocations: stats.invocations, smoothed: stats.smoothed })
            })
            .collect::<Result<_>>()
    })?;
    let log = GenerationLog {
        checkpoint_sha256: sha256_files(checkpoint, &[WEIGHTS_FILE])?,
        system: manifest.fusion.mode.system_name().to_string(),
        segment_len: manifest.generator.segment_len,
        clips,
    };
    log::info!("generated {} clips", log.clips.len());
    fs::write(out.join(GENERATION_LOG), serde_json::to_string_pretty(&log)?)?;
    Ok(())
}
