//! Forward kinematics over pose rows, with an analytic reverse pass so the
//! positional loss terms can be trained through it.

use nalgebra::{Matrix3, Vector3};
use ndarray::{Array2, ArrayView2};

use crate::bvh::Skeleton;

/// Lower bound on column norms inside the differentiable Gram-Schmidt step.
const NORM_FLOOR: f64 = 1e-12;

/// Precomputed hierarchy for FK on `3 + 6J` pose rows.
#[derive(Clone, Debug, PartialEq)]
pub struct FkPlan {
    parents: Vec<Option<usize>>,
    offsets: Vec<Vector3<f64>>,
}

struct Frame6 {
    a1: Vector3<f64>,
    b1: Vector3<f64>,
    na: f64,
    nb: f64,
    s: f64,
}

fn orthonormalize(x: &[f64]) -> (Matrix3<f64>, Frame6) {
    let a = Vector3::new(x[0], x[1], x[2]);
    let b = Vector3::new(x[3], x[4], x[5]);
    let na = a.norm().max(NORM_FLOOR);
    let a1 = a / na;
    let s = a1.dot(&b);
    let bp = b - a1 * s;
    let nb = bp.norm().max(NORM_FLOOR);
    let b1 = bp / nb;
    let c1 = a1.cross(&b1);
    (Matrix3::from_columns(&[a1, b1, c1]), Frame6 { a1, b1, na, nb, s })
}

impl FkPlan {
    pub fn new(skeleton: &Skeleton) -> Self {
        Self {
            parents: skeleton.joints.iter().map(|j| j.parent).collect(),
            offsets: skeleton.joints.iter().map(|j| Vector3::from(j.offset)).collect(),
        }
    }

    pub fn joint_count(&self) -> usize {
        self.parents.len()
    }

    pub fn pose_dim(&self) -> usize {
        3 + 6 * self.parents.len()
    }

    /// N × 3J joint positions from N × (3 + 6J) de-standardized poses.
    pub fn positions(&self, poses: ArrayView2<f64>) -> Array2<f64> {
        let j_count = self.joint_count();
        assert_eq!(poses.ncols(), self.pose_dim(), "pose width does not match skeleton");
        let mut out = Array2::zeros((poses.nrows(), 3 * j_count));
        let mut global = vec![Matrix3::identity(); j_count];
        let mut pos = vec![Vector3::zeros(); j_count];
        for (n, row) in poses.rows().into_iter().enumerate() {
            let row = row.to_vec();
            for j in 0..j_count {
                let (local, _) = orthonormalize(&row[3 + 6 * j..9 + 6 * j]);
                match self.parents[j] {
                    None => {
                        pos[j] = Vector3::new(row[0], row[1], row[2]);
                        global[j] = local;
                    }
                    Some(p) => {
                        pos[j] = pos[p] + global[p] * self.offsets[j];
                        global[j] = global[p] * local;
                    }
                }
                for k in 0..3 {
                    out[[n, 3 * j + k]] = pos[j][k];
                }
            }
        }
        out
    }

    /// Gradient with respect to the pose rows, given the gradient with
    /// respect to the positions.
    pub fn backward(&self, poses: ArrayView2<f64>, grad_pos: ArrayView2<f64>) -> Array2<f64> {
        let j_count = self.joint_count();
        let mut grad = Array2::zeros(poses.dim());
        let mut local = Vec::with_capacity(j_count);
        let mut frames = Vec::with_capacity(j_count);
        let mut global = vec![Matrix3::identity(); j_count];
        for (n, row) in poses.rows().into_iter().enumerate() {
            let row = row.to_vec();
            local.clear();
            frames.clear();
            for j in 0..j_count {
                let (r, f) = orthonormalize(&row[3 + 6 * j..9 + 6 * j]);
                global[j] = match self.parents[j] {
                    None => r,
                    Some(p) => global[p] * r,
                };
                local.push(r);
                frames.push(f);
            }

            let mut d_pos: Vec<Vector3<f64>> =
                (0..j_count).map(|j| Vector3::new(grad_pos[[n, 3 * j]], grad_pos[[n, 3 * j + 1]], grad_pos[[n, 3 * j + 2]])).collect();
            let mut d_global = vec![Matrix3::zeros(); j_count];
            for j in (0..j_count).rev() {
                let d_local = match self.parents[j] {
                    None => {
                        for k in 0..3 {
                            grad[[n, k]] += d_pos[j][k];
                        }
                        d_global[j]
                    }
                    Some(p) => {
                        let dp = d_pos[j];
                        d_pos[p] += dp;
                        d_global[p] += dp * self.offsets[j].transpose();
                        let dg = d_global[j];
                        d_global[p] += dg * local[j].transpose();
                        global[p].transpose() * dg
                    }
                };
                let d6 = orthonormalize_backward(&frames[j], &d_local);
                for (k, v) in d6.iter().enumerate() {
                    grad[[n, 3 + 6 * j + k]] += v;
                }
            }
        }
        grad
    }
}

fn orthonormalize_backward(f: &Frame6, d_r: &Matrix3<f64>) -> [f64; 6] {
    let d_a1_direct: Vector3<f64> = d_r.column(0).into();
    let d_b1_direct: Vector3<f64> = d_r.column(1).into();
    let d_c1: Vector3<f64> = d_r.column(2).into();
    // c1 = a1 × b1
    let d_a1 = d_a1_direct + f.b1.cross(&d_c1);
    let d_b1 = d_b1_direct + d_c1.cross(&f.a1);
    // b1 = b' / |b'|
    let d_bp = (d_b1 - f.b1 * f.b1.dot(&d_b1)) / f.nb;
    // b' = b - (a1·b) a1
    let a1_dot_dbp = f.a1.dot(&d_bp);
    let d_b = d_bp - f.a1 * a1_dot_dbp;
    let b = f.b1 * f.nb + f.a1 * f.s;
    let d_a1 = d_a1 - d_bp * f.s - b * a1_dot_dbp;
    // a1 = a / |a|
    let d_a = (d_a1 - f.a1 * f.a1.dot(&d_a1)) / f.na;
    [d_a[0], d_a[1], d_a[2], d_b[0], d_b[1], d_b[2]]
}
