//! Distribution and synchrony metrics for generated motion.

pub mod autoencoder;
pub mod beats;
pub mod frechet;

use ndarray::Array2;
use thiserror::Error;

use crate::pose::{forward_kinematics, MotionSequence, PoseError};

pub use autoencoder::{AutoencoderConfig, AutoencoderManifest, PoseAutoencoder};
pub use beats::{beat_align, extract_audio_beats, extract_motion_beats, BeatSequence, BeatSource, DEFAULT_SIGMA};
pub use frechet::{frechet_gaussian, GaussianStats};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("usage: {0}")]
    Usage(String),
    #[error("dimension mismatch: {0} vs {1}")]
    Dimension(usize, usize),
    #[error("motion has no beats; beat alignment is undefined")]
    NoMotionBeats,
    #[error(transparent)]
    Pose(#[from] PoseError),
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// Fréchet distance between autoencoder latents of generated and reference
/// windows.
pub fn compute_fgd(
    generated: &[MotionSequence],
    reference: &[MotionSequence],
    ae: &PoseAutoencoder,
) -> Result<f64, MetricsError> {
    let g = GaussianStats::fit(&ae.encode(generated)?)?;
    let r = GaussianStats::fit(&ae.encode(reference)?)?;
    frechet_gaussian(&g, &r)
}

/// Per-frame joint speeds (units per second), one row per frame pair.
pub fn kinetic_features(seq: &MotionSequence) -> Result<Array2<f64>, MetricsError> {
    let pos = forward_kinematics(seq)?;
    let (n, j, _) = pos.dim();
    Ok(Array2::from_shape_fn((n.saturating_sub(1), j), |(k, joint)| {
        (0..3).map(|a| (pos[[k + 1, joint, a]] - pos[[k, joint, a]]).powi(2)).sum::<f64>().sqrt() * seq.fps
    }))
}

fn stacked_kinetics(seqs: &[MotionSequence]) -> Result<Array2<f64>, MetricsError> {
    let parts = seqs.iter().map(kinetic_features).collect::<Result<Vec<_>, _>>()?;
    let cols = parts.first().map_or(0, |p| p.ncols());
    if let Some(p) = parts.iter().find(|p| p.ncols() != cols) {
        return Err(MetricsError::Dimension(cols, p.ncols()));
    }
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    if views.is_empty() {
        return Ok(Array2::zeros((0, 0)));
    }
    Ok(ndarray::concatenate(ndarray::Axis(0), &views).expect("equal widths"))
}

/// Fréchet distance between the joint-speed distributions.
pub fn compute_fdk(generated: &[MotionSequence], reference: &[MotionSequence]) -> Result<f64, MetricsError> {
    let g = GaussianStats::fit(&stacked_kinetics(generated)?)?;
    let r = GaussianStats::fit(&stacked_kinetics(reference)?)?;
    frechet_gaussian(&g, &r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bvh::{Channel, Joint, Skeleton};
    use crate::pose::rotation6d;
    use nalgebra::Matrix3;

    fn skeleton() -> Skeleton {
        let mut ch = vec![Channel::Xposition, Channel::Yposition, Channel::Zposition];
        ch.extend([Channel::Zrotation, Channel::Xrotation, Channel::Yrotation]);
        Skeleton { joints: vec![Joint { name: "Hips".into(), parent: None, offset: [0.0; 3], channels: ch, end_site: None }] }
    }

    fn moving(n: usize, f: impl Fn(usize) -> f64) -> MotionSequence {
        let r = rotation6d(&Matrix3::identity());
        let poses = Array2::from_shape_fn((n, 9), |(i, c)| if c == 0 { f(i) } else if c >= 3 { r[c - 3] } else { 0.0 });
        MotionSequence::new(poses, skeleton(), 30.0).unwrap()
    }

    #[test]
    fn kinetic_features_scale_with_fps() {
        let k = kinetic_features(&moving(4, |i| 0.1 * i as f64)).unwrap();
        assert_eq!(k.dim(), (3, 1));
        assert!(k.iter().all(|v| (v - 3.0).abs() < 1e-9));
    }

    #[test]
    fn fdk_zero_for_same_data_and_positive_otherwise() {
        let a = moving(40, |i| (i as f64 * 0.3).sin());
        let b = moving(40, |i| 2.0 * (i as f64 * 0.3).sin());
        assert!(compute_fdk(std::slice::from_ref(&a), std::slice::from_ref(&a)).unwrap().abs() < 1e-9);
        assert!(compute_fdk(&[a], &[b]).unwrap() > 0.1);
    }

    #[test]
    fn fdk_rejects_tiny_input() {
        let a = moving(2, |i| i as f64);
        assert!(matches!(compute_fdk(std::slice::from_ref(&a), std::slice::from_ref(&a)), Err(MetricsError::TooFewSamples(1))));
    }
}
