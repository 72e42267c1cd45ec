//! 6D rotation codec and Euler-angle conversions.

use nalgebra::{Matrix3, Vector3};

use super::PoseError;

/// Column pairs shorter than this (after orthogonalization) are degenerate.
const DEGENERACY_EPS: f64 = 1e-8;

/// Near-gimbal threshold on |cos(middle angle)|.
const GIMBAL_EPS: f64 = 1e-7;

/// First two matrix columns, column-major: (R00, R10, R20, R01, R11, R21).
pub fn rotation6d(m: &Matrix3<f64>) -> [f64; 6] {
    [m[(0, 0)], m[(1, 0)], m[(2, 0)], m[(0, 1)], m[(1, 1)], m[(2, 1)]]
}

/// Re-orthonormalizes a 6D vector into a rotation matrix.
pub fn gram_schmidt(v: &[f64; 6]) -> Result<Matrix3<f64>, PoseError> {
    let a = Vector3::new(v[0], v[1], v[2]);
    let b = Vector3::new(v[3], v[4], v[5]);
    let na = a.norm();
    if na < DEGENERACY_EPS {
        return Err(PoseError::Degenerate(format!("first column has norm {na:e}")));
    }
    let a1 = a / na;
    let b_perp = b - a1 * a1.dot(&b);
    let nb = b_perp.norm();
    if nb < DEGENERACY_EPS {
        return Err(PoseError::Degenerate(format!("columns are parallel (residual {nb:e})")));
    }
    let b1 = b_perp / nb;
    let c1 = a1.cross(&b1);
    Ok(Matrix3::from_columns(&[a1, b1, c1]))
}

/// Right-handed rotation about a Cartesian axis (0 = X, 1 = Y, 2 = Z).
pub fn axis_rotation(axis: usize, radians: f64) -> Matrix3<f64> {
    let (s, c) = radians.sin_cos();
    match axis {
        0 => Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c),
        1 => Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c),
        2 => Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0),
        _ => panic!("axis index {axis} out of range"),
    }
}

/// Intrinsic composition R = R_{order[0]}(a0) · R_{order[1]}(a1) · R_{order[2]}(a2),
/// angles in degrees.
pub fn euler_to_matrix(degrees: [f64; 3], order: [usize; 3]) -> Matrix3<f64> {
    axis_rotation(order[0], degrees[0].to_radians())
        * axis_rotation(order[1], degrees[1].to_radians())
        * axis_rotation(order[2], degrees[2].to_radians())
}

/// Inverse of [`euler_to_matrix`] for three distinct axes. Near gimbal lock
/// the third angle is fixed to 0.
pub fn matrix_to_euler(m: &Matrix3<f64>, order: [usize; 3]) -> [f64; 3] {
    let [i, j, k] = order;
    debug_assert!(i != j && j != k && i != k, "repeated axis in {order:?}");
    // +1 for cyclic orders (XYZ, YZX, ZXY), -1 otherwise.
    let sign = if (j + 3 - i) % 3 == 1 { 1.0 } else { -1.0 };
    let sin_mid = (sign * m[(i, k)]).clamp(-1.0, 1.0);
    let mid = sin_mid.asin();
    let (first, last);
    if mid.cos().abs() < GIMBAL_EPS {
        last = 0.0;
        let q = m * axis_rotation(j, mid).transpose();
        let (c1, c2) = ((i + 1) % 3, (i + 2) % 3);
        first = q[(c2, c1)].atan2(q[(c1, c1)]);
    } else {
        first = (-sign * m[(j, k)]).atan2(m[(k, k)]);
        last = (-sign * m[(i, j)]).atan2(m[(i, i)]);
    }
    [first.to_degrees(), mid.to_degrees(), last.to_degrees()]
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation3, UnitQuaternion};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const ORDERS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];

    #[test]
    fn identity_codec() {
        let v = rotation6d(&Matrix3::identity());
        assert_eq!(v, [1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        assert_eq!(gram_schmidt(&v).unwrap(), Matrix3::identity());
    }

    #[test]
    fn rz90_codec() {
        let v = rotation6d(&axis_rotation(2, std::f64::consts::FRAC_PI_2));
        let expected = [0.0, 1.0, 0.0, -1.0, 0.0, 0.0];
        for (a, b) in v.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn axis_rotation_agrees_with_nalgebra() {
        let axes = [Vector3::x_axis(), Vector3::y_axis(), Vector3::z_axis()];
        for (k, axis) in axes.iter().enumerate() {
            let expected = Rotation3::from_axis_angle(axis, 0.7);
            assert!((axis_rotation(k, 0.7) - expected.matrix()).abs().max() < 1e-15);
        }
    }

    #[test]
    fn degenerate_pairs_rejected() {
        assert!(matches!(gram_schmidt(&[1.0, 0.0, 0.0, 2.0, 0.0, 0.0]), Err(PoseError::Degenerate(_))));
        assert!(matches!(gram_schmidt(&[0.0; 6]), Err(PoseError::Degenerate(_))));
    }

    #[test]
    fn random_rotations_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ));
            let r = q.to_rotation_matrix().into_inner();
            let back = gram_schmidt(&rotation6d(&r)).unwrap();
            worst = worst.max((r - back).abs().max());
        }
        assert!(worst < 1e-5, "max error {worst}");
    }

    #[test]
    fn euler_round_trip_all_orders() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for order in ORDERS {
            for _ in 0..200 {
                let angles = [
                    rng.random_range(-180.0..180.0),
                    rng.random_range(-89.0..89.0),
                    rng.random_range(-180.0..180.0),
                ];
                let m = euler_to_matrix(angles, order);
                let back = matrix_to_euler(&m, order);
                for (a, b) in angles.iter().zip(back) {
                    assert!((a - b).abs() < 1e-8, "{order:?}: {angles:?} vs {back:?}");
                }
            }
        }
    }

    #[test]
    fn gimbal_branch_preserves_matrix() {
        for order in ORDERS {
            for mid in [90.0, -90.0] {
                let m = euler_to_matrix([30.0, mid, 45.0], order);
                let back = matrix_to_euler(&m, order);
                assert_eq!(back[2], 0.0);
                let m2 = euler_to_matrix(back, order);
                assert!((m - m2).abs().max() < 1e-6, "{order:?} {mid}");
            }
        }
    }
}
