use std::fs;
use std::path::Path;

use gesture_forge::dataset::{list_sessions, MAIN_AGENT, MOTION_FILE};
use gesture_forge::generator::Manifest;
use gesture_forge_cli::commands::{GenerationLog, GENERATION_LOG};
use gesture_forge_cli::{run, MetricsReport, EXIT_FAILURE, EXIT_OK, EXIT_USAGE};

const TINY: &str = r#"{
  "generator": {"segment_len": 30, "memory_len": 30, "d_model": 8, "n_layers": 1, "n_heads": 2, "ffn_mult": 2},
  "providers": {"audio_dim": 4, "text_dim": 6},
  "autoencoder": {"epochs": 2, "hidden": 16, "latent": 4, "stride": 15},
  "optimizer": {"lr": 0.001}
}"#;

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gf(args: &[&str]) -> i32 {
    run(std::iter::once("gesture-forge").chain(args.iter().copied()))
}

#[test]
fn synth_train_records_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let (data, ckpt, cfg) = (dir.path().join("data"), dir.path().join("ckpt"), dir.path().join("run.json"));
    fs::write(&cfg, TINY).unwrap();
    assert_eq!(gf(&["synth-data", "--seed", "7", "--sessions", "2", "--out", s(&data)]), EXIT_OK);
    assert_eq!(
        gf(&["train", "--config", s(&cfg), "--dataset", s(&data), "--epochs", "1", "--out", s(&ckpt)]),
        EXIT_OK
    );
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(ckpt.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.epochs, 1);
    assert_eq!(manifest.loss_curve.len(), 1);
    assert!(ckpt.join("run_config.json").is_file());
}

#[test]
fn prepared_features_match_on_the_fly_training() {
    let dir = tempfile::tempdir().unwrap();
    let (data, feats, cfg) = (dir.path().join("data"), dir.path().join("feats"), dir.path().join("run.json"));
    fs::write(&cfg, TINY).unwrap();
    assert_eq!(gf(&["synth-data", "--seed", "2", "--sessions", "3", "--duration", "2", "--out", s(&data)]), EXIT_OK);
    assert_eq!(gf(&["prepare", "--config", s(&cfg), "--dataset", s(&data), "--out", s(&feats), "--jobs", "2"]), EXIT_OK);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let base = ["train", "--config", s(&cfg), "--dataset", s(&data), "--epochs", "2"];
    assert_eq!(gf(&[&base[..], &["--out", s(&a)]].concat()), EXIT_OK);
    assert_eq!(gf(&[&base[..], &["--out", s(&b), "--features", s(&feats)]].concat()), EXIT_OK);
    assert_eq!(fs::read(a.join("weights.bin")).unwrap(), fs::read(b.join("weights.bin")).unwrap());
}

#[test]
fn generate_hundred_frames_logs_four_invocations() {
    let dir = tempfile::tempdir().unwrap();
    let (data, ckpt, out, cfg) =
        (dir.path().join("data"), dir.path().join("ckpt"), dir.path().join("gen"), dir.path().join("run.json"));
    fs::write(&cfg, TINY).unwrap();
    let duration = format!("{}", 100.0 / 30.0);
    assert_eq!(gf(&["synth-data", "--seed", "3", "--sessions", "2", "--duration", &duration, "--out", s(&data)]), EXIT_OK);
    assert_eq!(gf(&["train", "--config", s(&cfg), "--dataset", s(&data), "--epochs", "1", "--out", s(&ckpt)]), EXIT_OK);
    assert_eq!(gf(&["generate", "--checkpoint", s(&ckpt), "--dataset", s(&data), "--out", s(&out)]), EXIT_OK);
    let log: GenerationLog = serde_json::from_str(&fs::read_to_string(out.join(GENERATION_LOG)).unwrap()).unwrap();
    assert_eq!(log.clips.len(), 1);
    assert_eq!(log.clips[0].frames, 100);
    assert_eq!(log.clips[0].invocations, 4);
    assert!(log.clips[0].smoothed);
    assert!(out.join(format!("{}.bvh", log.clips[0].session)).is_file());
}

#[test]
fn evaluate_identity_gives_zero_distance_and_full_alignment() {
    let dir = tempfile::tempdir().unwrap();
    let (data, refs, out, cfg) =
        (dir.path().join("data"), dir.path().join("refs"), dir.path().join("eval"), dir.path().join("run.json"));
    fs::write(&cfg, TINY).unwrap();
    assert_eq!(gf(&["synth-data", "--seed", "5", "--sessions", "3", "--duration", "4", "--out", s(&data)]), EXIT_OK);
    fs::create_dir_all(&refs).unwrap();
    for (split, id) in list_sessions(&data).unwrap() {
        let src = data.join(split.as_str()).join(&id).join(MAIN_AGENT).join(MOTION_FILE);
        fs::copy(src, refs.join(format!("{id}.bvh"))).unwrap();
    }
    let generated = format!("same={}", s(&refs));
    assert_eq!(
        gf(&["evaluate", "--config", s(&cfg), "--generated", &generated, "--reference", s(&refs), "--out", s(&out)]),
        EXIT_OK
    );
    let report: MetricsReport = serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(report.beat_reference, "motion");
    let sys = &report.systems[0];
    assert_eq!((sys.name.as_str(), sys.n_clips), ("same", 3));
    assert!(sys.fgd.abs() < 1e-6, "{}", sys.fgd);
    assert!(sys.fdk.abs() < 1e-6, "{}", sys.fdk);
    assert_eq!(sys.beat_align, Some(1.0));
    let table = fs::read_to_string(out.join("metrics.txt")).unwrap();
    assert_eq!(table.lines().count(), 2);
}

#[test]
fn bad_config_and_missing_assets() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(&cfg, r#"{"epochz": 3}"#).unwrap();
    let out = dir.path().join("o");
    assert_eq!(gf(&["train", "--config", s(&cfg), "--dataset", s(dir.path()), "--out", s(&out)]), EXIT_USAGE);

    let data = dir.path().join("data");
    assert_eq!(gf(&["synth-data", "--seed", "1", "--sessions", "1", "--duration", "2", "--out", s(&data)]), EXIT_OK);
    let (split, id) = list_sessions(&data).unwrap().remove(0);
    fs::remove_file(data.join(split.as_str()).join(&id).join(MAIN_AGENT).join("transcript.tsv")).unwrap();
    assert_eq!(gf(&["prepare", "--dataset", s(&data), "--out", s(&out)]), EXIT_FAILURE);
}
