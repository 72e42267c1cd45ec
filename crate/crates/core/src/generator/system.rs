//! Fusion, speaker embedding and generator sharing one parameter store.

use std::collections::BTreeMap;

use ndarray::{concatenate, s, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Generator, GeneratorConfig, GeneratorError, SegmentMemory};
use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::bvh::Skeleton;
use crate::features::{FeatureMatrix, SpeakerTable, SPEAKER_DIM};
use crate::fusion::{FusionConfig, FusionLayer, FusionMode};
use crate::pose::kinematics::FkPlan;
use crate::pose::{smooth_motion, MotionSequence, Standardizer, FPS};

/// Smoothing window and polynomial order applied to generated motion.
pub const SMOOTHING_WINDOW: usize = 9;
pub const SMOOTHING_ORDER: usize = 2;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub frames: usize,
    pub invocations: usize,
    pub smoothed: bool,
}

/// Number of segments needed to cover `frames`.
pub fn invocation_count(frames: usize, segment_len: usize) -> usize {
    frames.div_ceil(segment_len)
}

fn pad_rows(x: Array2<f64>, rows: usize) -> Array2<f64> {
    if x.nrows() >= rows {
        return x;
    }
    let pad = Array2::zeros((rows - x.nrows(), x.ncols()));
    concatenate(Axis(0), &[x.view(), pad.view()]).expect("same width")
}

impl Generator {
    /// Runs the model over non-overlapping windows with carried memory,
    /// zero-padding the final window, then de-standardizes and smooths.
    pub fn generate(
        &self,
        store: &ParamStore,
        x_main: &Array2<f64>,
        x_inter: &Array2<f64>,
        standardizer: &Standardizer,
        skeleton: &Skeleton,
    ) -> Result<(MotionSequence, GenerationStats), GeneratorError> {
        let n = x_main.nrows();
        if n == 0 {
            return Err(GeneratorError::Empty);
        }
        if x_inter.nrows() != n {
            return Err(GeneratorError::SegmentShape { main: n, inter: x_inter.nrows(), segment_len: self.config.segment_len });
        }
        if standardizer.dims != self.config.pose_dim {
            return Err(GeneratorError::Config("standardizer width differs from pose_dim".into()));
        }
        let w = self.config.segment_len;
        let mut memory = SegmentMemory::empty(&self.config);
        let mut out = Array2::zeros((n, self.config.pose_dim));
        let mut stats = GenerationStats { frames: n, ..Default::default() };
        for start in (0..n).step_by(w) {
            let len = w.min(n - start);
            let xm = pad_rows(x_main.slice(s![start..start + len, ..]).to_owned(), w);
            let xi = pad_rows(x_inter.slice(s![start..start + len, ..]).to_owned(), w);
            let (y, next) = self.forward_segment(store, &xm, &xi, &memory)?;
            stats.invocations += 1;
            out.slice_mut(s![start..start + len, ..]).assign(&y.slice(s![..len, ..]));
            memory = next;
        }
        let seq = MotionSequence::new(standardizer.inverse(&out), skeleton.clone(), FPS)?;
        if n >= SMOOTHING_WINDOW {
            stats.smoothed = true;
            Ok((smooth_motion(&seq, SMOOTHING_WINDOW, SMOOTHING_ORDER)?, stats))
        } else {
            log::warn!("{n} generated frames is below the smoothing window; output left unsmoothed");
            Ok((seq, stats))
        }
    }
}

/// Per-agent inputs for one clip.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipFeatures {
    pub audio: FeatureMatrix,
    pub text: FeatureMatrix,
    pub speaker: String,
}

impl ClipFeatures {
    pub fn frames(&self) -> usize {
        self.audio.rows()
    }
}

/// The complete trainable system.
#[derive(Clone, Debug)]
pub struct GestureModel {
    pub generator: Generator,
    pub fusion: FusionLayer,
    pub speaker_param: ParamId,
    pub speakers: BTreeMap<String, usize>,
    pub store: ParamStore,
    pub standardizer: Standardizer,
    pub skeleton: Skeleton,
    plan: FkPlan,
}

impl GestureModel {
    /// Initializes every parameter from `config.seed`. Speaker labels get
    /// rows 1.. in iteration order; row 0 is the unknown-speaker row.
    pub fn new(
        config: GeneratorConfig,
        mode: FusionMode,
        audio_dim: usize,
        text_dim: usize,
        speakers: impl IntoIterator<Item = String>,
        standardizer: Standardizer,
        skeleton: Skeleton,
    ) -> Result<Self, GeneratorError> {
        config.validate()?;
        if standardizer.dims != config.pose_dim || 3 + 6 * skeleton.len() != config.pose_dim {
            return Err(GeneratorError::Config("pose_dim, standardizer and skeleton disagree".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let mut index = BTreeMap::new();
        for label in speakers {
            let next = index.len() + 1;
            index.entry(label).or_insert(next);
        }
        let rows = index.len() + 1;
        let table = Array2::from_shape_fn((rows, SPEAKER_DIM), |_| rng.random_range(-1.0..1.0));
        let speaker_param = store.add("speaker.embedding", table, false);
        let fusion = FusionLayer::init(FusionConfig { mode, d: config.d_model }, audio_dim, text_dim, &mut store, &mut rng);
        let generator = Generator::init(config, &mut store, &mut rng)?;
        let plan = FkPlan::new(&skeleton);
        Ok(Self { generator, fusion, speaker_param, speakers: index, store, standardizer, skeleton, plan })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.generator.config
    }

    pub fn plan(&self) -> &FkPlan {
        &self.plan
    }

    pub fn speaker_table(&self) -> SpeakerTable {
        SpeakerTable { id_to_index: self.speakers.clone(), embedding: self.store.get(self.speaker_param).clone() }
    }

    pub fn speaker_index(&self, label: &str) -> usize {
        self.speakers.get(label).copied().unwrap_or(0)
    }

    pub fn check_clip(&self, clip: &ClipFeatures) -> Result<(), GeneratorError> {
        let n = clip.frames();
        if clip.text.rows() != n {
            return Err(GeneratorError::Features(format!("audio has {n} rows, text has {}", clip.text.rows())));
        }
        let mode = self.fusion.config.mode;
        if mode.uses_audio() && clip.audio.cols() != self.fusion.audio_dim {
            return Err(GeneratorError::Features(format!(
                "audio width {} but the model expects {}",
                clip.audio.cols(),
                self.fusion.audio_dim
            )));
        }
        if mode.uses_text() && clip.text.cols() != self.fusion.text_dim {
            return Err(GeneratorError::Features(format!(
                "text width {} but the model expects {}",
                clip.text.cols(),
                self.fusion.text_dim
            )));
        }
        if !clip.audio.is_finite() || !clip.text.is_finite() {
            return Err(GeneratorError::Features("non-finite feature values".into()));
        }
        Ok(())
    }

    /// Fused features of frames `start..start + len`, zero-padded to the
    /// segment length.
    pub fn fuse_segment_tape(&self, tape: &Tape, clip: &ClipFeatures, start: usize, len: usize) -> Var {
        let rows = |m: &FeatureMatrix| tape.constant(m.values.slice(s![start..start + len, ..]).mapv(f64::from));
        let speaker = tape.gather_rows(tape.param(&self.store, self.speaker_param), vec![self.speaker_index(&clip.speaker); len]);
        let fused = self.fusion.forward(tape, &self.store, rows(&clip.audio), rows(&clip.text), speaker);
        let w = self.config().segment_len;
        if len < w {
            tape.concat_rows(&[fused, tape.constant(Array2::zeros((w - len, self.config().d_model)))])
        } else {
            fused
        }
    }

    /// Fused N × d features, computed one segment at a time.
    pub fn fused_features(&self, clip: &ClipFeatures) -> Result<Array2<f64>, GeneratorError> {
        self.check_clip(clip)?;
        let n = clip.frames();
        let w = self.config().segment_len;
        let mut out = Array2::zeros((n, self.config().d_model));
        for start in (0..n).step_by(w) {
            let len = w.min(n - start);
            let tape = Tape::new();
            let v = tape.value(self.fuse_segment_tape(&tape, clip, start, len));
            out.slice_mut(s![start..start + len, ..]).assign(&v.slice(s![..len, ..]));
        }
        Ok(out)
    }

    /// Main-agent motion for one dyadic clip.
    pub fn generate_clip(
        &self,
        main: &ClipFeatures,
        inter: &ClipFeatures,
    ) -> Result<(MotionSequence, GenerationStats), GeneratorError> {
        if main.frames() != inter.frames() {
            return Err(GeneratorError::Features(format!(
                "main agent has {} frames, interlocutor {}",
                main.frames(),
                inter.frames()
            )));
        }
        let xm = self.fused_features(main)?;
        let xi = self.fused_features(inter)?;
        self.generator.generate(&self.store, &xm, &xi, &self.standardizer, &self.skeleton)
    }
}
