//! Savitzky-Golay smoothing of pose sequences.

use nalgebra::{DMatrix, DVector};

use super::{MotionSequence, PoseError};

/// How the first and last `window / 2` samples are produced.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum EdgeMode {
    /// Fit the polynomial to the first/last full window and evaluate it at
    /// the edge samples. Polynomials up to `order` pass through unchanged.
    #[default]
    Interp,
    /// Reflect the signal about the edge sample (x[-k] = x[k]) and apply the
    /// center filter everywhere.
    Mirror,
}

fn check_params(window: usize, order: usize) -> Result<(), PoseError> {
    if window.is_multiple_of(2) || window == 0 {
        return Err(PoseError::SmoothingParams(format!("window {window} must be odd")));
    }
    if order >= window {
        return Err(PoseError::SmoothingParams(format!("order {order} must be below window {window}")));
    }
    Ok(())
}

/// Weights that evaluate the least-squares polynomial fit of a window at
/// sample `pos` (0-based within the window).
fn weights_at(window: usize, order: usize, pos: usize) -> Vec<f64> {
    let half = (window / 2) as f64;
    let design = DMatrix::from_fn(window, order + 1, |i, k| (i as f64 - half).powi(k as i32));
    let gram = design.transpose() * &design;
    let t = pos as f64 - half;
    let basis = DVector::from_fn(order + 1, |k, _| t.powi(k as i32));
    let solved = gram
        .cholesky()
        .expect("Vandermonde normal matrix is positive definite for order < window")
        .solve(&basis);
    (design * solved).iter().copied().collect()
}

/// Center-tap coefficients of a Savitzky-Golay filter.
pub fn savgol_coefficients(window: usize, order: usize) -> Result<Vec<f64>, PoseError> {
    check_params(window, order)?;
    Ok(weights_at(window, order, window / 2))
}

/// Smooths one signal. Requires `signal.len() >= window`.
pub fn savgol_filter(signal: &[f64], window: usize, order: usize, mode: EdgeMode) -> Result<Vec<f64>, PoseError> {
    check_params(window, order)?;
    let n = signal.len();
    if n < window {
        return Err(PoseError::TooShort { frames: n, window });
    }
    let half = window / 2;
    let center = weights_at(window, order, half);
    let mut out = vec![0.0; n];
    for i in half..n - half {
        out[i] = center.iter().zip(&signal[i - half..=i + half]).map(|(w, x)| w * x).sum();
    }
    match mode {
        EdgeMode::Interp => {
            for pos in 0..half {
                let w = weights_at(window, order, pos);
                out[pos] = w.iter().zip(&signal[..window]).map(|(w, x)| w * x).sum();
                let tail = window - 1 - pos;
                let w = weights_at(window, order, tail);
                out[n - 1 - pos] = w.iter().zip(&signal[n - window..]).map(|(w, x)| w * x).sum();
            }
        }
        EdgeMode::Mirror => {
            let reflect = |k: isize| -> f64 {
                let last = n as isize - 1;
                let idx = if k < 0 { -k } else if k > last { 2 * last - k } else { k };
                signal[idx.clamp(0, last) as usize]
            };
            for i in (0..half).chain(n - half..n) {
                out[i] = center
                    .iter()
                    .enumerate()
                    .map(|(k, w)| w * reflect(i as isize + k as isize - half as isize))
                    .sum();
            }
        }
    }
    Ok(out)
}

/// Per-dimension smoothing with the default (interp) edge mode.
pub fn smooth_motion(seq: &MotionSequence, window: usize, order: usize) -> Result<MotionSequence, PoseError> {
    smooth_motion_with(seq, window, order, EdgeMode::default())
}

pub fn smooth_motion_with(
    seq: &MotionSequence,
    window: usize,
    order: usize,
    mode: EdgeMode,
) -> Result<MotionSequence, PoseError> {
    check_params(window, order)?;
    if seq.len() < window {
        return Err(PoseError::TooShort { frames: seq.len(), window });
    }
    let mut out = seq.clone();
    for (c, column) in seq.poses.columns().into_iter().enumerate() {
        let smoothed = savgol_filter(&column.to_vec(), window, order, mode)?;
        for (n, v) in smoothed.into_iter().enumerate() {
            out.poses[[n, c]] = v;
        }
    }
    Ok(out)
}
