//! AdamW training with segment-level recurrence.

use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{composite_loss_tape, LossBreakdown};
use super::system::{ClipFeatures, GestureModel};
use super::{AdamWConfig, GeneratorError, LossWeights, SegmentMemory};
use crate::autodiff::{Mat, ParamId, ParamStore, Tape};

/// One dyadic clip with standardized main-agent target poses.
#[derive(Clone, Debug)]
pub struct TrainingClip {
    pub id: String,
    pub main: ClipFeatures,
    pub inter: ClipFeatures,
    pub target: Array2<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub loss_weights: LossWeights,
    pub optimizer: AdamWConfig,
    /// Visit clips in a seeded random order each epoch.
    pub shuffle: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self { epochs: 1, loss_weights: LossWeights::default(), optimizer: AdamWConfig::default(), shuffle: true }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Frame-weighted mean loss per epoch.
    pub loss_curve: Vec<f64>,
    pub last_breakdown: LossBreakdown,
    pub steps: u64,
}

/// Decoupled weight-decay Adam.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    lr_scale: f64,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, store: &ParamStore) -> Self {
        let zeros: Vec<Mat> = store.ids().map(|id| Array2::zeros(store.get(id).dim())).collect();
        Self { config, step: 0, lr_scale: 1.0, m: zeros.clone(), v: zeros }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Multiplies the configured learning rate for subsequent steps.
    pub fn set_lr_scale(&mut self, scale: f64) {
        self.lr_scale = scale;
    }

    /// Updates the parameters that received a gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, Mat)]) {
        self.step += 1;
        let c = self.config;
        let lr = c.lr * self.lr_scale;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (id, g) in grads {
            let decay = if store.decays(*id) { c.weight_decay } else { 0.0 };
            let m = &mut self.m[id.0];
            let v = &mut self.v[id.0];
            m.zip_mut_with(g, |m, &g| *m = c.beta1 * *m + (1.0 - c.beta1) * g);
            v.zip_mut_with(g, |v, &g| *v = c.beta2 * *v + (1.0 - c.beta2) * g * g);
            let p = store.get_mut(*id);
            ndarray::Zip::from(p).and(&*m).and(&*v).for_each(|p, &m, &v| {
                let update = (m / bc1) / ((v / bc2).sqrt() + c.eps);
                *p -= lr * (update + decay * *p);
            });
        }
    }
}

fn check_clip(model: &GestureModel, clip: &TrainingClip) -> Result<(), GeneratorError> {
    model.check_clip(&clip.main)?;
    model.check_clip(&clip.inter)?;
    let n = clip.main.frames();
    if clip.inter.frames() != n || clip.target.nrows() != n {
        return Err(GeneratorError::Features(format!("clip `{}` has inconsistent frame counts", clip.id)));
    }
    if clip.target.ncols() != model.config().pose_dim {
        return Err(GeneratorError::Features(format!("clip `{}` target width {}", clip.id, clip.target.ncols())));
    }
    if n == 0 {
        return Err(GeneratorError::Empty);
    }
    Ok(())
}

/// Loss, parameter gradients and next memory of one segment.
pub type SegmentOutcome = (LossBreakdown, Vec<(ParamId, Mat)>, SegmentMemory);

/// Loss and gradients of one segment, without updating parameters.
pub fn segment_loss(
    model: &GestureModel,
    clip: &TrainingClip,
    start: usize,
    len: usize,
    memory: &SegmentMemory,
    weights: &LossWeights,
) -> Result<SegmentOutcome, GeneratorError> {
    let tape = Tape::new();
    let xm = model.fuse_segment_tape(&tape, &clip.main, start, len);
    let xi = model.fuse_segment_tape(&tape, &clip.inter, start, len);
    let (y, next) = model.generator.forward_tape(&tape, &model.store, xm, xi, memory)?;
    let pred = tape.slice_rows(y, 0, len);
    let target = clip.target.slice(s![start..start + len, ..]).to_owned();
    let loss = composite_loss_tape(&tape, pred, &target, weights, model.plan(), &model.standardizer);
    let breakdown = loss.breakdown(&tape);
    if !breakdown.is_finite() {
        return Ok((breakdown, Vec::new(), next));
    }
    tape.backward(loss.total);
    Ok((breakdown, tape.param_grads(), next))
}

/// Trains in place. Each segment contributes one optimizer step; memory
/// flows forward within a clip and resets between clips.
pub fn train(model: &mut GestureModel, clips: &[TrainingClip], opts: &TrainOptions) -> Result<TrainReport, GeneratorError> {
    opts.loss_weights.validate()?;
    opts.optimizer.validate()?;
    for clip in clips {
        check_clip(model, clip)?;
    }
    let mut report = TrainReport::default();
    if opts.epochs == 0 {
        return Ok(report);
    }
    if clips.is_empty() {
        return Err(GeneratorError::Empty);
    }
    let mut optimizer = AdamW::new(opts.optimizer, &model.store);
    let mut rng = ChaCha8Rng::seed_from_u64(model.config().seed ^ 0x7472_6169_6e00_0000);
    let w = model.config().segment_len;
    let mut order: Vec<usize> = (0..clips.len()).collect();
    let per_epoch: usize = clips.iter().map(|c| c.main.frames().div_ceil(w)).sum();
    let total = (per_epoch * opts.epochs) as u64;
    for epoch in 0..opts.epochs {
        if opts.shuffle {
            order.shuffle(&mut rng);
        }
        let (mut sum, mut frames) = (0.0, 0usize);
        for &ci in &order {
            let clip = &clips[ci];
            let n = clip.main.frames();
            let mut memory = SegmentMemory::empty(model.config());
            for (segment, start) in (0..n).step_by(w).enumerate() {
                let len = w.min(n - start);
                let (breakdown, grads, next) = segment_loss(model, clip, start, len, &memory, &opts.loss_weights)?;
                let bad_grad = grads.iter().any(|(_, g)| g.iter().any(|v| !v.is_finite()));
                if !breakdown.is_finite() || bad_grad {
                    log::error!(
                        "non-finite training loss at epoch {epoch}, clip `{}`, segment {segment}: {breakdown:?}",
                        clip.id
                    );
                    return Err(GeneratorError::NonFinite { epoch, clip: clip.id.clone(), segment, breakdown });
                }
                optimizer.set_lr_scale(opts.optimizer.lr_factor(optimizer.steps(), total));
                optimizer.step(&mut model.store, &grads);
                sum += breakdown.total * len as f64;
                frames += len;
                report.last_breakdown = breakdown;
                memory = next;
            }
        }
        let epoch_loss = sum / frames as f64;
        log::debug!("epoch {epoch}: loss {epoch_loss:.6}");
        report.loss_curve.push(epoch_loss);
    }
    report.steps = optimizer.steps();
    Ok(report)
}
