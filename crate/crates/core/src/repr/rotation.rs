//! Rotation primitives: Euler angles, the 6D (two-column) representation and
//! sine-cosine pairs for hinges.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};

use crate::schema::{Axis, RotationOrder};

/// Minimum norm accepted by Gram-Schmidt and by `sincos_to_angle`.
pub const EPS_GS: f64 = 1e-8;

/// Below this `|cos(middle angle)|` the Euler extraction treats the pose as
/// gimbal-locked.
pub const GIMBAL_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
#[error("degenerate rotation input (norm below {EPS_GS})")]
pub struct DegenerateInput;

/// Elementary right-handed rotation about a coordinate axis.
pub fn axis_rotation(axis: Axis, angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    match axis {
        Axis::X => Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c),
        Axis::Y => Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c),
        Axis::Z => Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0),
    }
}

/// Rotation about an arbitrary unit axis (Rodrigues).
pub fn hinge_rotation(axis: &Vector3<f64>, cos: f64, sin: f64) -> Matrix3<f64> {
    let k = axis.cross_matrix();
    Matrix3::identity() + k * sin + k * k * (1.0 - cos)
}

/// Intrinsic Euler angles to a rotation matrix: `R = R_a(θ0) R_b(θ1) R_c(θ2)`.
pub fn euler_to_matrix(angles: [f64; 3], order: RotationOrder) -> Matrix3<f64> {
    let [a, b, c] = order.axes();
    axis_rotation(a, angles[0]) * axis_rotation(b, angles[1]) * axis_rotation(c, angles[2])
}

/// Euler extraction for the given order. The flag reports gimbal lock, in
/// which case the third angle is fixed to 0 and absorbed into the first.
pub fn matrix_to_euler(r: &Matrix3<f64>, order: RotationOrder) -> ([f64; 3], bool) {
    let [ai, aj, ak] = order.axes();
    let (i, j, k) = (ai.index(), aj.index(), ak.index());
    let e = if order.is_cyclic() { 1.0 } else { -1.0 };

    let middle = (e * r[(i, k)]).clamp(-1.0, 1.0).asin();
    if middle.cos().abs() >= GIMBAL_EPS {
        let first = (-e * r[(j, k)]).atan2(r[(k, k)]);
        let third = (-e * r[(i, j)]).atan2(r[(i, i)]);
        ([first, middle, third], false)
    } else {
        let ra = r * axis_rotation(aj, middle).transpose();
        let n1 = (i + 1) % 3;
        let n2 = (i + 2) % 3;
        let first = ra[(n2, n1)].atan2(ra[(n1, n1)]);
        ([first, middle, 0.0], true)
    }
}

/// First two columns of `r`, concatenated.
pub fn matrix_to_6d(r: &Matrix3<f64>) -> [f64; 6] {
    [
        r[(0, 0)],
        r[(1, 0)],
        r[(2, 0)],
        r[(0, 1)],
        r[(1, 1)],
        r[(2, 1)],
    ]
}

/// Gram-Schmidt reconstruction of a rotation matrix from a 6D vector.
pub fn sixd_to_matrix(v: &[f64; 6]) -> Result<Matrix3<f64>, DegenerateInput> {
    let a1 = Vector3::new(v[0], v[1], v[2]);
    let a2 = Vector3::new(v[3], v[4], v[5]);
    let n1 = a1.norm();
    if !(n1 >= EPS_GS) {
        return Err(DegenerateInput);
    }
    let b1 = a1 / n1;
    let residual = a2 - b1 * b1.dot(&a2);
    let n2 = residual.norm();
    if !(n2 >= EPS_GS) {
        return Err(DegenerateInput);
    }
    let b2 = residual / n2;
    let b3 = b1.cross(&b2);
    Ok(Matrix3::from_columns(&[b1, b2, b3]))
}

pub fn angle_to_sincos(theta: f64) -> (f64, f64) {
    let (s, c) = theta.sin_cos();
    (c, s)
}

/// Angle of an (unnormalized) `(cos, sin)` pair in `(-π, π]`. Returns
/// `(0, true)` when the pair is too short to carry a direction.
pub fn sincos_to_angle(c: f64, s: f64) -> (f64, bool) {
    if !(c.hypot(s) >= EPS_GS) {
        return (0.0, true);
    }
    (canonical_angle(s.atan2(c)), false)
}

/// Maps `-π` onto `π` so that results live in `(-π, π]`.
pub fn canonical_angle(theta: f64) -> f64 {
    if theta <= -PI {
        PI
    } else {
        theta
    }
}

/// Wraps any finite angle into `(-π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let (s, c) = theta.sin_cos();
    canonical_angle(s.atan2(c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Quaternion, UnitQuaternion};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    // Quaternion oracle, deliberately built from axis-angle products rather
    // than the matrix path above.
    fn quat_axis(axis: Axis, angle: f64) -> UnitQuaternion<f64> {
        let half = angle / 2.0;
        let mut v = [0.0; 3];
        v[axis.index()] = half.sin();
        UnitQuaternion::from_quaternion(Quaternion::new(half.cos(), v[0], v[1], v[2]))
    }

    fn quat_euler(angles: [f64; 3], order: RotationOrder) -> UnitQuaternion<f64> {
        let [a, b, c] = order.axes();
        quat_axis(a, angles[0]) * quat_axis(b, angles[1]) * quat_axis(c, angles[2])
    }

    fn quat_to_matrix(q: &UnitQuaternion<f64>) -> Matrix3<f64> {
        let (w, x, y, z) = (q.w, q.i, q.j, q.k);
        Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    fn random_angles(rng: &mut ChaCha8Rng) -> [f64; 3] {
        [
            rng.random_range(-PI..PI),
            rng.random_range(-PI..PI),
            rng.random_range(-PI..PI),
        ]
    }

    fn max_abs(m: &Matrix3<f64>) -> f64 {
        m.iter().fold(0.0f64, |a, &b| a.max(b.abs()))
    }

    #[test]
    fn zero_angles_give_identity() {
        for o in RotationOrder::ALL {
            assert_eq!(euler_to_matrix([0.0; 3], o), Matrix3::identity());
        }
    }

    #[test]
    fn quarter_turn_about_x_maps_y_to_z() {
        let r = euler_to_matrix([FRAC_PI_2, 0.0, 0.0], RotationOrder::Xyz);
        let y = r * Vector3::y();
        assert!((y - Vector3::z()).norm() < 1e-15);
        let oracle = quat_to_matrix(&quat_euler([FRAC_PI_2, 0.0, 0.0], RotationOrder::Xyz));
        assert!(max_abs(&(r - oracle)) < 1e-15);
    }

    #[test]
    fn euler_matches_quaternion_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            for o in RotationOrder::ALL {
                let a = random_angles(&mut rng);
                let b = random_angles(&mut rng);
                let r = euler_to_matrix(a, o);
                assert!(max_abs(&(r - quat_to_matrix(&quat_euler(a, o)))) < 1e-12);
                let composed = euler_to_matrix(a, o) * euler_to_matrix(b, o);
                let q = quat_euler(a, o) * quat_euler(b, o);
                assert!(max_abs(&(composed - quat_to_matrix(&q))) < 1e-12);
                assert!(max_abs(&(r.transpose() * r - Matrix3::identity())) < 1e-12);
                assert!((r.determinant() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn euler_extraction_round_trips_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..500 {
            for o in RotationOrder::ALL {
                let r = euler_to_matrix(random_angles(&mut rng), o);
                let (angles, _) = matrix_to_euler(&r, o);
                assert!(max_abs(&(euler_to_matrix(angles, o) - r)) < 1e-10);
                assert!(angles.iter().all(|a| a.abs() <= PI));
            }
        }
    }

    #[test]
    fn gimbal_lock_absorbs_third_angle() {
        for o in RotationOrder::ALL {
            for middle in [FRAC_PI_2, -FRAC_PI_2] {
                let r = euler_to_matrix([0.3, middle, -0.7], o);
                let (angles, locked) = matrix_to_euler(&r, o);
                assert!(locked, "{o}");
                assert_eq!(angles[2], 0.0);
                assert!(max_abs(&(euler_to_matrix(angles, o) - r)) < 1e-7, "{o}");
            }
        }
    }

    #[test]
    fn sixd_examples() {
        let id = sixd_to_matrix(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(id, Matrix3::identity());
        let r = sixd_to_matrix(&[2.0, 0.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
        assert!(max_abs(&(r - Matrix3::identity())) < 1e-15);
        assert_eq!(
            sixd_to_matrix(&[0.0, 0.0, 0.0, 0.0, 1.0, 0.0]),
            Err(DegenerateInput)
        );
        assert_eq!(
            sixd_to_matrix(&[1.0, 0.0, 0.0, 3.0, 0.0, 0.0]),
            Err(DegenerateInput)
        );
        assert_eq!(
            matrix_to_6d(&Matrix3::identity()),
            [1.0, 0.0, 0.0, 0.0, 1.0, 0.0]
        );
    }

    #[test]
    fn sixd_round_trip_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..1000 {
            let r = euler_to_matrix(random_angles(&mut rng), RotationOrder::Zyx);
            let v = matrix_to_6d(&r);
            assert!(((v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt() - 1.0).abs() < 1e-12);
            let back = sixd_to_matrix(&v).unwrap();
            assert!(max_abs(&(back - r)) < 1e-10);
        }
    }

    #[test]
    fn sincos_examples() {
        assert_eq!(angle_to_sincos(0.0), (1.0, 0.0));
        let (c, s) = angle_to_sincos(FRAC_PI_2);
        assert!(c.abs() < 1e-16 && (s - 1.0).abs() < 1e-16);
        let (c, s) = angle_to_sincos(-PI);
        assert!((c + 1.0).abs() < 1e-16 && s.abs() < 1e-15);
        assert_eq!(sincos_to_angle(c, s), (PI, false));
        assert_eq!(sincos_to_angle(-1.0, -0.0), (PI, false));
        assert_eq!(sincos_to_angle(1.0, 0.0), (0.0, false));
        assert!((sincos_to_angle(0.5, 0.5).0 - PI / 4.0).abs() < 1e-15);
        assert_eq!(sincos_to_angle(0.0, 0.0), (0.0, true));
        let (a, _) = sincos_to_angle(0.3, -0.8);
        let b = sincos_to_angle(3.0 * 0.3, 3.0 * -0.8).0;
        assert!((a - b).abs() <= 4.0 * f64::EPSILON);
    }

    #[test]
    fn hinge_matches_axis_rotation() {
        for axis in [Axis::X, Axis::Y, Axis::Z] {
            let (c, s) = angle_to_sincos(0.7);
            let r = hinge_rotation(&axis.unit(), c, s);
            assert!(max_abs(&(r - axis_rotation(axis, 0.7))) < 1e-15);
        }
    }
}
