use gesture_forge::dataset::{list_sessions, load_session, make_synthetic, Split, SyntheticSpec};
use gesture_forge::features::{MockAudioProvider, MockTextProvider};
use gesture_forge::fusion::FusionMode;
use gesture_forge::generator::{train, GeneratorConfig, GestureModel, TrainOptions, TrainingClip};
use gesture_forge::metrics::{
    beat_align, compute_fdk, extract_audio_beats, extract_motion_beats, AutoencoderConfig, PoseAutoencoder,
};
use gesture_forge::pose::{standardize, Direction, Standardizer};

#[test]
fn synthetic_data_trains_generates_and_scores() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec { n_sessions: 3, duration_s: 3.0, ..SyntheticSpec::new(4) };
    make_synthetic(&spec, dir.path()).unwrap();
    let sessions: Vec<_> =
        list_sessions(dir.path()).unwrap().into_iter().map(|(_, id)| load_session(dir.path(), &id).unwrap()).collect();
    let audio = MockAudioProvider::new(4, 0);
    let text = MockTextProvider::new(6, 0);
    let train_motion: Vec<_> = sessions.iter().filter(|s| s.split == Split::Train).map(|s| s.main.motion.clone().unwrap()).collect();
    assert!(!train_motion.is_empty());
    let standardizer = Standardizer::fit(&train_motion).unwrap();
    let skeleton = train_motion[0].skeleton.clone();

    let mut config = GeneratorConfig::new(3 + 6 * skeleton.len(), 9);
    config.segment_len = 30;
    config.memory_len = 30;
    config.d_model = 8;
    config.n_layers = 1;
    config.n_heads = 2;
    config.ffn_mult = 2;
    let speakers = sessions.iter().map(|s| s.main.speaker_id.clone());
    let mut model =
        GestureModel::new(config, FusionMode::Concat, 4, 6, speakers, standardizer.clone(), skeleton).unwrap();

    let clips: Vec<TrainingClip> = sessions
        .iter()
        .filter(|s| s.split == Split::Train)
        .map(|s| {
            let (main, inter) = s.features(&audio, &text).unwrap();
            let target = standardize(s.main.motion.as_ref().unwrap(), &standardizer, Direction::Forward).unwrap().poses;
            TrainingClip { id: s.id.clone(), main, inter, target }
        })
        .collect();
    let report = train(&mut model, &clips, &TrainOptions { epochs: 2, ..Default::default() }).unwrap();
    assert_eq!(report.loss_curve.len(), 2);
    assert!(report.loss_curve.iter().all(|l| l.is_finite()));

    let test = sessions.iter().find(|s| s.split == Split::Test).unwrap();
    let (main, inter) = test.features(&audio, &text).unwrap();
    let (generated, stats) = model.generate_clip(&main, &inter).unwrap();
    assert_eq!(generated.len(), 90);
    assert_eq!(stats.invocations, 3);

    let reference = test.main.motion.clone().unwrap();
    assert!(compute_fdk(std::slice::from_ref(&reference), std::slice::from_ref(&reference)).unwrap().abs() < 1e-9);
    assert!(compute_fdk(std::slice::from_ref(&generated), std::slice::from_ref(&reference)).unwrap().is_finite());

    let ae_cfg = AutoencoderConfig { epochs: 2, hidden: 16, latent: 4, stride: 5, ..Default::default() };
    let ae = PoseAutoencoder::fit(&train_motion, ae_cfg, "train").unwrap();
    let fgd = gesture_forge::metrics::compute_fgd(std::slice::from_ref(&reference), std::slice::from_ref(&reference), &ae).unwrap();
    assert!(fgd.abs() < 1e-6);

    let audio_beats = extract_audio_beats(&test.main.audio, test.main.sample_rate);
    assert!(!audio_beats.is_empty());
    let motion_beats = extract_motion_beats(&reference).unwrap();
    let ba = beat_align(&motion_beats, &audio_beats, 0.1).unwrap();
    assert!((0.0..=1.0).contains(&ba));
}
