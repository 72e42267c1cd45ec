//! Gaussian statistics and the Fréchet distance between them.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::MetricsError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianStats {
    pub mean: Array1<f64>,
    pub cov: Array2<f64>,
    pub count: usize,
}

impl GaussianStats {
    /// Sample mean and unbiased covariance of the rows of `samples`.
    pub fn fit(samples: &Array2<f64>) -> Result<Self, MetricsError> {
        let count = samples.nrows();
        if count < 2 {
            return Err(MetricsError::TooFewSamples(count));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(MetricsError::NonFinite("samples"));
        }
        let mean = samples.mean_axis(Axis(0)).expect("count >= 2");
        let centered = samples - &mean;
        let mut cov = centered.t().dot(&centered) / (count - 1) as f64;
        symmetrize(&mut cov);
        Ok(Self { mean, cov, count })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

fn symmetrize(m: &mut Array2<f64>) {
    let t = m.t().to_owned();
    *m += &t;
    *m *= 0.5;
}

fn to_dmatrix(m: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| m[[r, c]])
}

/// Square root of a symmetric positive-semidefinite matrix, with negative
/// eigenvalues clamped to zero.
fn psd_sqrt(m: DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m);
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// `‖μp − μq‖² + Tr(Σp + Σq − 2 (Σp Σq)^½)`.
///
/// The trace term uses `Tr((Σp Σq)^½) = Tr((Σp^½ Σq Σp^½)^½)`, which keeps
/// every decomposition symmetric.
pub fn frechet_gaussian(p: &GaussianStats, q: &GaussianStats) -> Result<f64, MetricsError> {
    if p.dim() != q.dim() || p.cov.dim() != (p.dim(), p.dim()) || q.cov.dim() != (q.dim(), q.dim()) {
        return Err(MetricsError::Dimension(p.dim(), q.dim()));
    }
    for s in [p, q] {
        if s.cov.iter().chain(s.mean.iter()).any(|v| !v.is_finite()) {
            return Err(MetricsError::NonFinite("covariance"));
        }
    }
    let diff = &p.mean - &q.mean;
    let mean_term = diff.dot(&diff);
    let sp = psd_sqrt(to_dmatrix(&p.cov));
    let mut inner = &sp * to_dmatrix(&q.cov) * &sp;
    inner = (&inner + inner.transpose()) * 0.5;
    let cross: f64 = SymmetricEigen::new(inner).eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum();
    let d = mean_term + p.cov.diag().sum() + q.cov.diag().sum() - 2.0 * cross;
    Ok(d.max(0.0))
}
