//! Rotation, position, velocity, acceleration and kinetic-energy loss.

use std::rc::Rc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{GeneratorError, LossWeights};
use crate::autodiff::{Mat, Tape, Var};
use crate::pose::kinematics::FkPlan;
use crate::pose::{MotionSequence, Standardizer};

/// Per-term values of one loss evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub rotation: f64,
    pub position: f64,
    pub velocity: f64,
    pub acceleration: f64,
    pub kinetic: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.rotation, self.position, self.velocity, self.acceleration, self.kinetic, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Loss nodes recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub terms: [Var; 5],
}

impl LossVars {
    pub fn breakdown(&self, tape: &Tape) -> LossBreakdown {
        let t = self.terms.map(|v| tape.scalar(v));
        LossBreakdown {
            rotation: t[0],
            position: t[1],
            velocity: t[2],
            acceleration: t[3],
            kinetic: t[4],
            total: tape.scalar(self.total),
        }
    }
}

/// `rows × n` forward-difference operator of the given order.
fn difference_matrix(n: usize, order: usize) -> Mat {
    let mut d = Array2::eye(n);
    for k in 0..order {
        let m = n - k;
        let step = Array2::from_shape_fn((m - 1, m), |(i, j)| {
            if j == i + 1 {
                1.0
            } else if j == i {
                -1.0
            } else {
                0.0
            }
        });
        d = step.dot(&d);
    }
    d
}

/// Sums x/y/z columns per joint: `3J × J`.
fn joint_grouping(joints: usize) -> Mat {
    Array2::from_shape_fn((3 * joints, joints), |(r, c)| if r / 3 == c { 1.0 } else { 0.0 })
}

/// Records the composite loss of standardized predictions `pred` against
/// standardized `target`. Joint positions come from forward kinematics on
/// de-standardized poses. Temporal terms use per-frame differences and are
/// zero below three frames.
pub fn composite_loss_tape(
    tape: &Tape,
    pred: Var,
    target: &Mat,
    weights: &LossWeights,
    plan: &FkPlan,
    standardizer: &Standardizer,
) -> LossVars {
    let (n, p) = tape.shape(pred);
    assert_eq!((n, p), target.dim(), "prediction and target shapes differ");
    let t = tape.constant(target.clone());
    let rotation = tape.mean_abs(tape.sub(tape.slice_cols(pred, 3, p - 3), tape.slice_cols(t, 3, p - 3)));

    let plan = Rc::new(plan.clone());
    let destd = tape.add_row(
        tape.mul_row(pred, tape.constant(standardizer.std_row())),
        tape.constant(standardizer.mean_row()),
    );
    let pos = tape.forward_kinematics(destd, Rc::clone(&plan));
    let target_pos = plan.positions(standardizer.inverse(target).view());
    let position = tape.mean_abs(tape.sub(pos, tape.constant(target_pos.clone())));

    let zero = || tape.constant(Array2::zeros((1, 1)));
    let (velocity, acceleration, kinetic) = if n < 3 {
        log::warn!("loss over {n} frames: velocity, acceleration and kinetic terms set to 0");
        (zero(), zero(), zero())
    } else {
        let d1 = difference_matrix(n, 1);
        let d2 = difference_matrix(n, 2);
        let vp = tape.matmul(tape.constant(d1.clone()), pos);
        let vt = d1.dot(&target_pos);
        let ap = tape.matmul(tape.constant(d2.clone()), pos);
        let at = d2.dot(&target_pos);
        let group = joint_grouping(plan.joint_count());
        let ep = tape.matmul(tape.square(vp), tape.constant(group.clone()));
        let et = (&vt * &vt).dot(&group);
        (
            tape.mean_abs(tape.sub(vp, tape.constant(vt))),
            tape.mean_abs(tape.sub(ap, tape.constant(at))),
            tape.mean_abs(tape.sub(ep, tape.constant(et))),
        )
    };
    let terms = [rotation, position, velocity, acceleration, kinetic];
    let w = [weights.w_r, weights.w_p, weights.w_v, weights.w_a, weights.w_k];
    let pairs: Vec<(Var, f64)> = terms.iter().copied().zip(w).collect();
    LossVars { total: tape.weighted_sum(&pairs), terms }
}

/// Composite loss between two standardized sequences.
pub fn composite_loss(
    pred: &MotionSequence,
    target: &MotionSequence,
    weights: &LossWeights,
    standardizer: &Standardizer,
) -> Result<LossBreakdown, GeneratorError> {
    weights.validate()?;
    if !pred.standardized || !target.standardized {
        return Err(GeneratorError::Loss("loss expects standardized sequences".into()));
    }
    if pred.poses.dim() != target.poses.dim() {
        return Err(GeneratorError::Loss(format!("shapes {:?} and {:?} differ", pred.poses.dim(), target.poses.dim())));
    }
    if standardizer.dims != pred.poses.ncols() {
        return Err(GeneratorError::Loss("standardizer width does not match poses".into()));
    }
    let tape = Tape::new();
    let plan = FkPlan::new(&target.skeleton);
    let vars = composite_loss_tape(&tape, tape.constant(pred.poses.clone()), &target.poses, weights, &plan, standardizer);
    Ok(vars.breakdown(&tape))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::rotation::rotation6d;
    use crate::pose::tests::chain_skeleton;
    use nalgebra::Matrix3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn seq(poses: Array2<f64>, skel: &crate::bvh::Skeleton) -> MotionSequence {
        let mut s = MotionSequence::new(poses, skel.clone(), 30.0).unwrap();
        s.standardized = true;
        s
    }

    /// Straight-loop FK: rotation from Gram-Schmidt, offsets rotated by the
    /// parent's global rotation.
    fn loop_positions(row: &[f64], skel: &crate::bvh::Skeleton) -> Vec<[f64; 3]> {
        let j = skel.len();
        let mut rot = vec![Matrix3::<f64>::identity(); j];
        let mut pos = vec![[0.0; 3]; j];
        for k in 0..j {
            let x = &row[3 + 6 * k..9 + 6 * k];
            let a = nalgebra::Vector3::new(x[0], x[1], x[2]).normalize();
            let b0 = nalgebra::Vector3::new(x[3], x[4], x[5]);
            let b = (b0 - a * a.dot(&b0)).normalize();
            let local = Matrix3::from_columns(&[a, b, a.cross(&b)]);
            match skel.joints[k].parent {
                None => {
                    pos[k] = [row[0], row[1], row[2]];
                    rot[k] = local;
                }
                Some(p) => {
                    let off = rot[p] * nalgebra::Vector3::from(skel.joints[k].offset);
                    pos[k] = [pos[p][0] + off[0], pos[p][1] + off[1], pos[p][2] + off[2]];
                    rot[k] = rot[p] * local;
                }
            }
        }
        pos
    }

    fn oracle(pred: &Array2<f64>, target: &Array2<f64>, s: &Standardizer, skel: &crate::bvh::Skeleton) -> [f64; 5] {
        let (n, p) = pred.dim();
        let mut rot = 0.0;
        for i in 0..n {
            for c in 3..p {
                rot += (pred[[i, c]] - target[[i, c]]).abs();
            }
        }
        rot /= (n * (p - 3)) as f64;
        let de = |m: &Array2<f64>, i: usize| -> Vec<f64> { (0..p).map(|c| m[[i, c]] * s.std[c] + s.mean[c]).collect() };
        let pp: Vec<Vec<[f64; 3]>> = (0..n).map(|i| loop_positions(&de(pred, i), skel)).collect();
        let tp: Vec<Vec<[f64; 3]>> = (0..n).map(|i| loop_positions(&de(target, i), skel)).collect();
        let j = skel.len();
        let mut pos = 0.0;
        for i in 0..n {
            for k in 0..j {
                for a in 0..3 {
                    pos += (pp[i][k][a] - tp[i][k][a]).abs();
                }
            }
        }
        pos /= (n * j * 3) as f64;
        let vel = |x: &Vec<Vec<[f64; 3]>>, i: usize, k: usize, a: usize| x[i + 1][k][a] - x[i][k][a];
        let acc = |x: &Vec<Vec<[f64; 3]>>, i: usize, k: usize, a: usize| x[i + 2][k][a] - 2.0 * x[i + 1][k][a] + x[i][k][a];
        let (mut v, mut ac, mut e) = (0.0, 0.0, 0.0);
        for k in 0..j {
            for i in 0..n - 1 {
                let (mut ep, mut et) = (0.0, 0.0);
                for a in 0..3 {
                    v += (vel(&pp, i, k, a) - vel(&tp, i, k, a)).abs();
                    ep += vel(&pp, i, k, a).powi(2);
                    et += vel(&tp, i, k, a).powi(2);
                }
                e += (ep - et).abs();
            }
            for i in 0..n - 2 {
                for a in 0..3 {
                    ac += (acc(&pp, i, k, a) - acc(&tp, i, k, a)).abs();
                }
            }
        }
        [rot, pos, v / ((n - 1) * j * 3) as f64, ac / ((n - 2) * j * 3) as f64, e / ((n - 1) * j) as f64]
    }

    fn standardizer(p: usize, rng: &mut ChaCha8Rng) -> Standardizer {
        Standardizer {
            mean: (0..p).map(|_| rng.random_range(-0.5..0.5)).collect(),
            std: (0..p).map(|_| rng.random_range(0.5..1.5)).collect(),
            dims: p,
        }
    }

    #[test]
    fn identical_sequences_give_zero() {
        let skel = chain_skeleton(&[[0.0; 3], [0.0, 1.0, 0.0], [0.0, 1.0, 0.0]]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = Array2::from_shape_fn((6, 21), |_| rng.random_range(-1.0..1.0));
        let s = standardizer(21, &mut rng);
        let l = composite_loss(&seq(p.clone(), &skel), &seq(p, &skel), &LossWeights::default(), &s).unwrap();
        assert_eq!(l, LossBreakdown::default());
    }

    #[test]
    fn static_offset_rotation_only_hits_pose_terms() {
        let skel = chain_skeleton(&[[0.0; 3], [0.0, 1.0, 0.0]]);
        let rz = |deg: f64| rotation6d(&nalgebra::Rotation3::from_axis_angle(&nalgebra::Vector3::z_axis(), deg.to_radians()).into_inner());
        let frame = |root: [f64; 6]| {
            let mut r = vec![0.0, 0.0, 0.0];
            r.extend_from_slice(&root);
            r.extend_from_slice(&rz(0.0));
            r
        };
        let a = Array2::from_shape_fn((5, 15), |(_, c)| frame(rz(0.0))[c]);
        let b = Array2::from_shape_fn((5, 15), |(_, c)| frame(rz(30.0))[c]);
        let s = Standardizer::identity(15);
        let l = composite_loss(&seq(a, &skel), &seq(b, &skel), &LossWeights::default(), &s).unwrap();
        assert_eq!((l.velocity, l.acceleration, l.kinetic), (0.0, 0.0, 0.0));
        assert!(l.rotation > 0.0 && l.position > 0.0);
    }

    #[test]
    fn terms_match_loop_oracle() {
        let skel = chain_skeleton(&[[0.0; 3], [0.3, 1.0, 0.0], [0.0, 0.8, 0.4]]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pred = Array2::from_shape_fn((7, 21), |_| rng.random_range(-1.0..1.0));
        let target = Array2::from_shape_fn((7, 21), |_| rng.random_range(-1.0..1.0));
        let s = standardizer(21, &mut rng);
        let w = LossWeights { w_r: 0.5, w_p: 2.0, w_v: 1.5, w_a: 0.25, w_k: 3.0 };
        let l = composite_loss(&seq(pred.clone(), &skel), &seq(target.clone(), &skel), &w, &s).unwrap();
        let o = oracle(&pred, &target, &s, &skel);
        let got = [l.rotation, l.position, l.velocity, l.acceleration, l.kinetic];
        for (g, e) in got.iter().zip(o) {
            assert!((g - e).abs() < 1e-6, "{g} vs {e}");
        }
        let total = 0.5 * o[0] + 2.0 * o[1] + 1.5 * o[2] + 0.25 * o[3] + 3.0 * o[4];
        assert!((l.total - total).abs() < 1e-6);
    }

    #[test]
    fn short_sequences_drop_temporal_terms() {
        let skel = chain_skeleton(&[[0.0; 3], [0.0, 1.0, 0.0]]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Array2::from_shape_fn((2, 15), |_| rng.random_range(-1.0..1.0));
        let b = Array2::from_shape_fn((2, 15), |_| rng.random_range(-1.0..1.0));
        let l = composite_loss(&seq(a, &skel), &seq(b, &skel), &LossWeights::default(), &Standardizer::identity(15)).unwrap();
        assert_eq!((l.velocity, l.acceleration, l.kinetic), (0.0, 0.0, 0.0));
        assert!(l.rotation > 0.0);
    }

    #[test]
    fn loss_positive_when_any_frame_differs() {
        let skel = chain_skeleton(&[[0.0; 3], [0.0, 1.0, 0.0]]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = Array2::from_shape_fn((4, 15), |_| rng.random_range(-1.0..1.0));
        let mut b = a.clone();
        b[[2, 0]] += 1e-3;
        let l = composite_loss(&seq(a, &skel), &seq(b, &skel), &LossWeights::default(), &Standardizer::identity(15)).unwrap();
        assert!(l.total > 0.0);
    }

    #[test]
    fn difference_operators() {
        let x = Array2::from_shape_fn((5, 1), |(i, _)| (i * i) as f64);
        assert_eq!(difference_matrix(5, 1).dot(&x).column(0).to_vec(), vec![1.0, 3.0, 5.0, 7.0]);
        assert_eq!(difference_matrix(5, 2).dot(&x).column(0).to_vec(), vec![2.0, 2.0, 2.0]);
    }
}
