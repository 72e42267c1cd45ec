use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use gesture_forge::dataset::{list_sessions, load_motion, load_session, Split};
use gesture_forge::metrics::autoencoder::{MANIFEST_FILE, STANDARDIZER_FILE, WEIGHTS_FILE};
use gesture_forge::metrics::{
    beat_align, compute_fdk, compute_fgd, extract_audio_beats, extract_motion_beats, BeatSequence, PoseAutoencoder,
};
use gesture_forge::pose::MotionSequence;

use super::{pool, sha256_files, GenerationLog, GENERATION_LOG};
use crate::config::RunConfig;
use crate::report::{report_render, MetricsReport, SystemScores};

pub const METRICS_JSON: &str = "metrics.json";
pub const METRICS_TEXT: &str = "metrics.txt";
pub const AUTOENCODER_DIR: &str = "autoencoder";

#[derive(Clone, Debug)]
pub struct EvaluateArgs {
    pub generated: Vec<String>,
    pub reference: PathBuf,
    pub dataset: Option<PathBuf>,
    pub autoencoder: Option<PathBuf>,
    pub out: PathBuf,
    pub jobs: usize,
}

fn parse_system(spec: &str) -> (String, PathBuf) {
    match spec.split_once('=') {
        Some((name, dir)) if !name.is_empty() => (name.to_string(), PathBuf::from(dir)),
        _ => {
            let dir = PathBuf::from(spec);
            let name = dir.file_name().map_or_else(|| spec.to_string(), |n| n.to_string_lossy().into_owned());
            (name, dir)
        }
    }
}

/// `<stem>.bvh` files of a directory keyed by stem.
fn bvh_dir(dir: &Path, pool: &rayon::ThreadPool) -> Result<BTreeMap<String, MotionSequence>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "bvh"))
        .collect();
    paths.sort();
    let loaded: Vec<(String, MotionSequence)> = pool.install(|| {
        paths
            .par_iter()
            .map(|p| -> Result<(String, MotionSequence)> {
                let stem = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                Ok((stem, load_motion(p).context("dataset")?))
            })
            .collect::<Result<_>>()
    })?;
    Ok(loaded.into_iter().collect())
}

fn is_dataset(root: &Path) -> bool {
    list_sessions(root).is_ok_and(|s| !s.is_empty())
}

fn motion_digest(seqs: &BTreeMap<String, MotionSequence>) -> String {
    let mut h = Sha256::new();
    for (id, m) in seqs {
        h.update(id.as_bytes());
        h.update((m.len() as u64).to_le_bytes());
        for v in &m.poses {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

fn fit_autoencoder(
    cfg: &RunConfig,
    dataset: Option<&Path>,
    reference: &BTreeMap<String, MotionSequence>,
    pool: &rayon::ThreadPool,
) -> Result<PoseAutoencoder> {
    let (training, desc): (Vec<MotionSequence>, String) = match dataset {
        Some(root) => {
            let sessions = super::load_sessions(root, Some(Split::Train), pool)?;
            let motion: Vec<MotionSequence> = sessions.into_iter().filter_map(|s| s.main.motion).collect();
            (motion, "dataset train split, main agent".to_string())
        }
        None => (reference.values().cloned().collect(), "reference set".to_string()),
    };
    if training.is_empty() {
        bail!("metrics: no motion to fit the autoencoder on");
    }
    let ae_cfg = gesture_forge::metrics::AutoencoderConfig { seed: cfg.seed, ..cfg.autoencoder.clone() };
    PoseAutoencoder::fit(&training, ae_cfg, &desc).context("metrics: fitting autoencoder")
}

pub fn evaluate(cfg: &RunConfig, args: &EvaluateArgs) -> Result<()> {
    let pool = pool(args.jobs)?;
    let systems: Vec<(String, BTreeMap<String, MotionSequence>, PathBuf)> = args
        .generated
        .iter()
        .map(|spec| {
            let (name, dir) = parse_system(spec);
            Ok((name, bvh_dir(&dir, &pool)?, dir))
        })
        .collect::<Result<_>>()?;

    let reference_is_dataset = is_dataset(&args.reference);
    let dataset = args
        .dataset
        .clone()
        .or_else(|| reference_is_dataset.then(|| args.reference.clone()))
        .or_else(|| cfg.dataset.clone());

    let wanted: std::collections::BTreeSet<&String> = systems.iter().flat_map(|(_, g, _)| g.keys()).collect();
    let reference: BTreeMap<String, MotionSequence> = if reference_is_dataset {
        let ids: Vec<&String> = wanted.iter().copied().collect();
        pool.install(|| {
            ids.par_iter()
                .map(|id| -> Result<(String, MotionSequence)> {
                    let s = load_session(&args.reference, id).with_context(|| format!("dataset: reference {id}"))?;
                    let m = s.main.motion.with_context(|| format!("dataset: reference {id} has no motion"))?;
                    Ok(((*id).clone(), m))
                })
                .collect::<Result<_>>()
        })?
    } else {
        bvh_dir(&args.reference, &pool)?
    };

    let audio_beats: Option<BTreeMap<String, BeatSequence>> = match &dataset {
        Some(root) if is_dataset(root) => {
            let ids: Vec<&String> = wanted.iter().copied().collect();
            Some(pool.install(|| {
                ids.par_iter()
                    .map(|id| -> Result<(String, BeatSequence)> {
                        let s = load_session(root, id).with_context(|| format!("dataset: audio for {id}"))?;
                        Ok(((*id).clone(), extract_audio_beats(&s.main.audio, s.main.sample_rate)))
                    })
                    .collect::<Result<_>>()
            })?)
        }
        _ => None,
    };
    let beat_reference = if audio_beats.is_some() { "audio" } else { "motion" };

    let ae = match &args.autoencoder {
        Some(dir) => PoseAutoencoder::load(dir).context("metrics: loading autoencoder")?,
        None => fit_autoencoder(cfg, dataset.as_deref().filter(|d| is_dataset(d)), &reference, &pool)?,
    };
    let ae_dir = args.out.join(AUTOENCODER_DIR);
    ae.save(&ae_dir).context("metrics: saving autoencoder")?;

    let mut hashes = BTreeMap::new();
    hashes.insert("autoencoder".to_string(), sha256_files(&ae_dir, &[MANIFEST_FILE, WEIGHTS_FILE, STANDARDIZER_FILE])?);
    hashes.insert("reference".to_string(), motion_digest(&reference));

    let mut scores = Vec::new();
    for (name, generated, dir) in &systems {
        let mut gen = Vec::new();
        let mut refs = Vec::new();
        for (id, g) in generated {
            let r = reference.get(id).with_context(|| format!("metrics: no reference motion for clip `{id}`"))?;
            gen.push(g.clone());
            refs.push(r.clone());
        }
        let fgd = compute_fgd(&gen, &refs, &ae).with_context(|| format!("metrics: FGD for {name}"))?;
        let fdk = compute_fdk(&gen, &refs).with_context(|| format!("metrics: FD_k for {name}"))?;
        let ids: Vec<&String> = generated.keys().collect();
        let per_clip: Vec<Option<f64>> = pool.install(|| {
            ids.par_iter()
                .zip(gen.par_iter())
                .zip(refs.par_iter())
                .map(|((id, g), r)| -> Result<Option<f64>> {
                    let target = match &audio_beats {
                        Some(a) => a[*id].clone(),
                        None => extract_motion_beats(r)?,
                    };
                    let beats = extract_motion_beats(g)?;
                    if beats.is_empty() {
                        log::warn!("{name}/{id}: no motion beats, excluded from BA");
                        return Ok(None);
                    }
                    Ok(Some(beat_align(&beats, &target, cfg.beat_sigma)?))
                })
                .collect::<Result<_>>()
        })?;
        let valid: Vec<f64> = per_clip.into_iter().flatten().collect();
        let ba = (!valid.is_empty()).then(|| valid.iter().sum::<f64>() / valid.len() as f64);
        scores.push(SystemScores { name: name.clone(), fgd, fdk, beat_align: ba, n_clips: generated.len() });
        hashes.insert(format!("generated:{name}"), motion_digest(generated));
        let log_path = dir.join(GENERATION_LOG);
        if log_path.is_file() {
            let log: GenerationLog = serde_json::from_str(&fs::read_to_string(&log_path)?)
                .with_context(|| format!("reading {}", log_path.display()))?;
            hashes.insert(format!("checkpoint:{name}"), log.checkpoint_sha256);
        }
    }

    let report = MetricsReport {
        systems: scores,
        beat_reference: beat_reference.to_string(),
        beat_sigma: cfg.beat_sigma,
        manifest_hashes: hashes,
    };
    let value = serde_json::to_value(&report)?;
    fs::create_dir_all(&args.out)?;
    fs::write(args.out.join(METRICS_JSON), serde_json::to_string_pretty(&value)?)?;
    let table = report_render(&value)?;
    fs::write(args.out.join(METRICS_TEXT), &table)?;
    print!("{table}");
    Ok(())
}
