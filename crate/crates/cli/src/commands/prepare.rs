use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use gesture_forge::dataset::Split;
use gesture_forge::features::save_archive;

use super::{features_to_archive, load_sessions, pool, session_features};
use crate::config::{ProviderConfig, RunConfig};

pub const PREPARE_MANIFEST: &str = "prepare.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreparedSession {
    pub id: String,
    pub split: Split,
    pub frames: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrepareManifest {
    pub providers: ProviderConfig,
    pub seed: u64,
    pub sessions: Vec<PreparedSession>,
}

/// Writes one feature archive per session under `out/<session>/`.
pub fn prepare(cfg: &RunConfig, out: &Path, jobs: usize) -> Result<()> {
    let root = cfg.dataset()?;
    let pool = pool(jobs)?;
    let sessions = load_sessions(root, None, &pool)?;
    let providers = cfg.providers.build(cfg.seed)?;
    fs::create_dir_all(out)?;
    let entries: Vec<PreparedSession> = pool.install(|| {
        sessions
            .par_iter()
            .map(|s| -> Result<PreparedSession> {
                let (main, inter) = session_features(s, &providers, None)?;
                let dir = out.join(&s.id);
                save_archive(&dir, &features_to_archive(&main, &inter))
                    .with_context(|| format!("features: writing {}", dir.display()))?;
                Ok(PreparedSession { id: s.id.clone(), split: s.split, frames: s.frames })
            })
            .collect::<Result<_>>()
    })?;
    log::info!("prepared {} sessions", entries.len());
    let manifest = PrepareManifest { providers: cfg.providers.clone(), seed: cfg.seed, sessions: entries };
    fs::write(out.join(PREPARE_MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}
