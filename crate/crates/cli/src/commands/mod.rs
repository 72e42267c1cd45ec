//! Subcommand implementations.

mod evaluate;
mod generate;
mod prepare;
mod train;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use gesture_forge::dataset::{list_sessions, load_session, make_synthetic, DyadicSession, Split, SyntheticSpec};
use gesture_forge::features::{load_archive, FeatureMatrix, Modality};
use gesture_forge::generator::ClipFeatures;

use crate::config::{Overrides, Providers, RunConfig};
use crate::{Command, Common};

pub use evaluate::{evaluate, EvaluateArgs};
pub use generate::{generate, GenerationLog, GENERATION_LOG};
pub use prepare::{prepare, PREPARE_MANIFEST};
pub use train::{train, TRAIN_REPORT};

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::SynthData { out, seed, sessions, duration, speakers } => {
            if !(duration > 0.0 && duration.is_finite()) {
                return Err(crate::UsageError(format!("--duration must be positive, got {duration}")).into());
            }
            let spec = SyntheticSpec { n_sessions: sessions, duration_s: duration, n_speakers: speakers, ..SyntheticSpec::new(seed) };
            make_synthetic(&spec, &out).context("dataset")?;
            log::info!("wrote {sessions} synthetic sessions to {}", out.display());
            Ok(())
        }
        Command::Prepare { common, dataset, out } => {
            let cfg = resolve(&common, Overrides { dataset, ..Default::default() })?;
            prepare(&cfg, &out, common.jobs as usize)
        }
        Command::Train { common, dataset, features, fusion, epochs, out } => {
            let cfg = resolve(&common, Overrides { dataset, fusion, epochs, ..Default::default() })?;
            train(&cfg, features.as_deref(), &out, common.jobs as usize)
        }
        Command::Generate { common, checkpoint, dataset, features, split, out } => {
            let split: Split = split.parse().map_err(crate::UsageError)?;
            generate(&checkpoint, dataset.as_deref(), features.as_deref(), split, &out, common.jobs as usize)
        }
        Command::Evaluate { common, generated, reference, dataset, autoencoder, out } => {
            let cfg = resolve(&common, Overrides::default())?;
            let args = EvaluateArgs { generated, reference, dataset, autoencoder, out, jobs: common.jobs as usize };
            evaluate(&cfg, &args)
        }
    }
}

fn resolve(common: &Common, overrides: Overrides) -> Result<RunConfig> {
    RunConfig::resolve(common.config.as_deref(), &Overrides { seed: common.seed, ..overrides })
}

pub(crate) fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build()?)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest over the named files of a directory, in the given order.
pub fn sha256_files(dir: &Path, names: &[&str]) -> Result<String> {
    let mut h = Sha256::new();
    for name in names {
        let bytes = fs::read(dir.join(name)).with_context(|| format!("hashing {}", dir.join(name).display()))?;
        h.update(name.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

/// Sessions of `split` (all splits when `None`), loaded in parallel.
pub(crate) fn load_sessions(root: &Path, split: Option<Split>, pool: &rayon::ThreadPool) -> Result<Vec<DyadicSession>> {
    let ids: Vec<String> = list_sessions(root)
        .with_context(|| format!("dataset: listing {}", root.display()))?
        .into_iter()
        .filter(|(s, _)| split.is_none_or(|want| *s == want))
        .map(|(_, id)| id)
        .collect();
    if !root.is_dir() {
        bail!("dataset: {} is not a directory", root.display());
    }
    pool.install(|| {
        ids.par_iter()
            .map(|id| load_session(root, id).with_context(|| format!("dataset: session {id}")))
            .collect()
    })
}

pub(crate) const ARCHIVE_ENTRIES: [&str; 4] = ["main_audio", "main_text", "inter_audio", "inter_text"];

pub(crate) fn features_to_archive(main: &ClipFeatures, inter: &ClipFeatures) -> BTreeMap<String, FeatureMatrix> {
    let blocks = [&main.audio, &main.text, &inter.audio, &inter.text];
    ARCHIVE_ENTRIES.iter().zip(blocks).map(|(n, m)| (n.to_string(), m.clone())).collect()
}

/// Features for one session, read from a `prepare` directory when given.
pub(crate) fn session_features(
    session: &DyadicSession,
    providers: &Providers,
    features_dir: Option<&Path>,
) -> Result<(ClipFeatures, ClipFeatures)> {
    let Some(dir) = features_dir else {
        return session.features(providers.0.as_ref(), providers.1.as_ref()).with_context(|| format!("features: session {}", session.id));
    };
    let path = dir.join(&session.id);
    let mut archive = load_archive(&path).with_context(|| format!("features: {}", path.display()))?;
    let mut take = |name: &str, modality: Modality, dim: usize| -> Result<FeatureMatrix> {
        let m = archive.remove(name).with_context(|| format!("features: {} has no `{name}` entry", path.display()))?;
        if m.rows() != session.frames || m.cols() != dim || m.modality != modality {
            bail!(
                "features: `{name}` in {} is {}×{} {:?}, expected {}×{dim} {modality:?}",
                path.display(),
                m.rows(),
                m.cols(),
                m.modality,
                session.frames
            );
        }
        Ok(m)
    };
    let (ad, td) = (providers.0.dim(), providers.1.dim());
    let main = ClipFeatures {
        audio: take("main_audio", Modality::Audio, ad)?,
        text: take("main_text", Modality::Text, td)?,
        speaker: session.main.speaker_id.clone(),
    };
    let inter = ClipFeatures {
        audio: take("inter_audio", Modality::Audio, ad)?,
        text: take("inter_text", Modality::Text, td)?,
        speaker: session.interlocutor.speaker_id.clone(),
    };
    Ok((main, inter))
}
