//! Rigid-body transform algebra on SE(3).
//!
//! [`RigidTransform`] is the currency of the whole stack: graph edges, chain
//! estimates and controller inputs are all expressed with it. The convention
//! throughout is `T_ab : p_a = T_ab * p_b`, i.e. a transform maps coordinates
//! of frame `b` into frame `a`, and `compose(T_ab, T_bc) = T_ac`.
//!
//! Euler angles use the Z-Y-X (yaw-pitch-roll) convention with the world
//! z-axis up. Rotations are stored as orthonormal matrices and re-orthonormalised
//! whenever long composition chains accumulate a defect above 1e-9.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

/// Orthonormality defect above which a rotation is rejected at construction.
pub const ROTATION_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum Se3Error {
    #[error("rotation matrix is not orthonormal (defect {defect:.3e})")]
    NotOrthonormal { defect: f64 },
    #[error("rotation matrix has determinant {det:.6} (expected +1)")]
    NotProperRotation { det: f64 },
    #[error("yaw is ill-defined: pitch within {0:.3e} of +/-pi/2")]
    GimbalLock(f64),
}

/// An SE(3) pose: orthonormal rotation plus translation in metres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Build a transform, validating the rotation part.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, Se3Error> {
        let defect = orthonormality_defect(&rotation);
        if defect > ROTATION_TOL {
            return Err(Se3Error::NotOrthonormal { defect });
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > 1e-6 {
            return Err(Se3Error::NotProperRotation { det });
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    /// Build without validation. Callers must guarantee orthonormality.
    pub(crate) fn from_parts_unchecked(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Z-Y-X Euler construction: `R = Rz(yaw) * Ry(pitch) * Rx(roll)`.
    pub fn from_euler(roll: f64, pitch: f64, yaw: f64, translation: Vector3<f64>) -> Self {
        Self {
            rotation: rot_z(yaw) * rot_y(pitch) * rot_x(roll),
            translation,
        }
    }

    pub fn from_axis_angle(axis_angle: &AxisAngle, translation: Vector3<f64>) -> Self {
        Self {
            rotation: axis_angle.exp(),
            translation,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// `compose(T_ab, T_bc) = T_ac`, the homogeneous matrix product restricted
    /// to SE(3). Re-orthonormalises if the accumulated defect exceeds 1e-9.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        let mut rotation = self.rotation * other.rotation;
        if orthonormality_defect(&rotation) > ROTATION_TOL {
            rotation = reorthonormalize(&rotation);
        }
        RigidTransform {
            rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Inverse: rotation transposed, translation `-R^T t`.
    pub fn invert(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Apply to a point: `p_a = T_ab * p_b`.
    pub fn apply(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * point + self.translation
    }

    /// Rotate a direction (no translation).
    pub fn rotate(&self, dir: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * dir
    }

    /// Yaw of the Z-Y-X Euler factorisation, in `(-pi, pi]`.
    ///
    /// Fails when the pitch is within 1e-6 of +/-pi/2, where yaw and roll
    /// become indistinguishable.
    pub fn yaw(&self) -> Result<f64, Se3Error> {
        let (_, pitch, yaw) = self.euler_zyx();
        let margin = (pitch.abs() - std::f64::consts::FRAC_PI_2).abs();
        if margin < 1e-6 {
            return Err(Se3Error::GimbalLock(margin));
        }
        Ok(yaw)
    }

    /// (roll, pitch, yaw) of the Z-Y-X factorisation, yaw in `(-pi, pi]`.
    pub fn euler_zyx(&self) -> (f64, f64, f64) {
        let r = &self.rotation;
        let pitch = (-r[(2, 0)]).clamp(-1.0, 1.0).asin();
        let yaw = half_open_pi(r[(1, 0)].atan2(r[(0, 0)]));
        let roll = r[(2, 1)].atan2(r[(2, 2)]);
        (roll, pitch, yaw)
    }

    /// Axis-angle magnitude of the rotation part, in `[0, pi]`.
    pub fn rotation_magnitude(&self) -> f64 {
        let r = &self.rotation;
        // atan2 of the skew norm against (trace-1)/2 is accurate near zero,
        // where acos((trace-1)/2) loses half the significant digits.
        let skew = Vector3::new(
            r[(2, 1)] - r[(1, 2)],
            r[(0, 2)] - r[(2, 0)],
            r[(1, 0)] - r[(0, 1)],
        );
        let cos_term = (r.trace() - 1.0) / 2.0;
        (skew.norm() / 2.0).atan2(cos_term)
    }

    /// Logarithm of the rotation part.
    pub fn axis_angle(&self) -> AxisAngle {
        AxisAngle::log(&self.rotation)
    }

    /// Frobenius distance to the identity over rotation plus translation norm.
    /// Handy for "is approximately identity" assertions.
    pub fn deviation_from_identity(&self) -> (f64, f64) {
        let rot_dev = (self.rotation - Matrix3::identity()).norm();
        (rot_dev, self.translation.norm())
    }
}

/// Rotation as an axis-angle vector; the magnitude is the angle in `[0, pi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisAngle {
    vector: Vector3<f64>,
}

impl AxisAngle {
    pub fn new(vector: Vector3<f64>) -> Self {
        Self { vector }
    }

    pub fn vector(&self) -> &Vector3<f64> {
        &self.vector
    }

    pub fn angle(&self) -> f64 {
        self.vector.norm()
    }

    /// Rodrigues' formula.
    pub fn exp(&self) -> Matrix3<f64> {
        let angle = self.angle();
        if angle < 1e-12 {
            return Matrix3::identity() + skew(&self.vector);
        }
        let axis = self.vector / angle;
        let k = skew(&axis);
        Matrix3::identity() + angle.sin() * k + (1.0 - angle.cos()) * (k * k)
    }

    /// Inverse of [`AxisAngle::exp`]. Accurate away from pi; at pi the axis is
    /// recovered from the symmetric part (sign convention: largest component
    /// positive).
    pub fn log(rotation: &Matrix3<f64>) -> Self {
        let skew_vec = Vector3::new(
            rotation[(2, 1)] - rotation[(1, 2)],
            rotation[(0, 2)] - rotation[(2, 0)],
            rotation[(1, 0)] - rotation[(0, 1)],
        );
        let cos_term = (rotation.trace() - 1.0) / 2.0;
        let angle = (skew_vec.norm() / 2.0).atan2(cos_term);
        if angle < 1e-12 {
            return Self {
                vector: skew_vec / 2.0,
            };
        }
        if angle > std::f64::consts::PI - 1e-6 {
            // Near pi the skew part vanishes; use R = I + 2*sin^2(a/2)*(nn^T - I).
            let b = (rotation + Matrix3::identity()) / 2.0;
            let mut axis = Vector3::new(b[(0, 0)].max(0.0).sqrt(), b[(1, 1)].max(0.0).sqrt(), b[(2, 2)].max(0.0).sqrt());
            // Fix relative signs from off-diagonal terms.
            let k = if axis.x >= axis.y && axis.x >= axis.z {
                0
            } else if axis.y >= axis.z {
                1
            } else {
                2
            };
            for i in 0..3 {
                if i != k && b[(k, i)] < 0.0 {
                    axis[i] = -axis[i];
                }
            }
            if axis.norm() > 1e-12 {
                axis /= axis.norm();
            }
            return Self {
                vector: axis * angle,
            };
        }
        let axis = skew_vec / skew_vec.norm();
        Self {
            vector: axis * angle,
        }
    }
}

/// Skew-symmetric (cross-product) matrix of `v`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

pub fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Wrap an angle into `(-pi, pi]`.
pub fn half_open_pi(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut w = a % two_pi;
    if w <= -std::f64::consts::PI {
        w += two_pi;
    } else if w > std::f64::consts::PI {
        w -= two_pi;
    }
    w
}

fn orthonormality_defect(r: &Matrix3<f64>) -> f64 {
    (r * r.transpose() - Matrix3::identity())
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Nearest rotation by polar decomposition (SVD).
fn reorthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = r.svd(true, true);
    let u = svd.u.expect("svd of 3x3 always yields u");
    let vt = svd.v_t.expect("svd of 3x3 always yields v_t");
    let mut fixed = u * vt;
    if fixed.determinant() < 0.0 {
        let mut u2 = u;
        u2.column_mut(2).neg_mut();
        fixed = u2 * vt;
    }
    fixed
}

/// Random-transform helper shared by tests across the crate.
#[cfg(test)]
pub(crate) mod tests_support {
    use super::*;
    use rand::Rng;

    pub fn random_transform(rng: &mut impl Rng) -> RigidTransform {
        let axis = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let angle = rng.random_range(-3.0..3.0);
        let aa = if axis.norm() > 1e-6 {
            AxisAngle::new(axis / axis.norm() * angle)
        } else {
            AxisAngle::new(Vector3::zeros())
        };
        let t = Vector3::new(
            rng.random_range(-10.0..10.0),
            rng.random_range(-10.0..10.0),
            rng.random_range(-10.0..10.0),
        );
        RigidTransform::from_axis_angle(&aa, t)
    }
}

#[cfg(test)]
mod tests {
    use super::tests_support::random_transform;
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::Matrix4;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn to_homogeneous(t: &RigidTransform) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(t.rotation());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(t.translation());
        m
    }

    #[test]
    fn compose_identity_is_noop() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let t = random_transform(&mut rng);
        let composed = RigidTransform::identity().compose(&t);
        assert_abs_diff_eq!(composed.rotation(), t.rotation(), epsilon = 1e-15);
        assert_abs_diff_eq!(composed.translation(), t.translation(), epsilon = 1e-15);
    }

    #[test]
    fn compose_with_inverse_is_identity() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        for _ in 0..100 {
            let t = random_transform(&mut rng);
            let (rot_dev, trans_dev) = t.compose(&t.invert()).deviation_from_identity();
            assert!(rot_dev < 1e-12, "rotation deviation {rot_dev}");
            assert!(trans_dev < 1e-12, "translation deviation {trans_dev}");
        }
    }

    #[test]
    fn compose_matches_homogeneous_matrix_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for _ in 0..200 {
            let a = random_transform(&mut rng);
            let b = random_transform(&mut rng);
            let got = to_homogeneous(&a.compose(&b));
            let want = to_homogeneous(&a) * to_homogeneous(&b);
            assert_abs_diff_eq!(got, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn invert_identity_and_pure_translation() {
        let i = RigidTransform::identity().invert();
        assert_eq!(i, RigidTransform::identity());

        let t = RigidTransform::from_translation(Vector3::new(1.0, 2.0, 3.0)).invert();
        assert_abs_diff_eq!(
            t.translation(),
            &Vector3::new(-1.0, -2.0, -3.0),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(t.rotation(), &Matrix3::identity(), epsilon = 1e-15);
    }

    #[test]
    fn yaw_of_identity_and_pure_yaw() {
        assert_eq!(RigidTransform::identity().yaw().unwrap(), 0.0);
        let t = RigidTransform::from_euler(0.0, 0.0, 0.3, Vector3::zeros());
        assert_abs_diff_eq!(t.yaw().unwrap(), 0.3, epsilon = 1e-12);
    }

    #[test]
    fn yaw_matches_euler_oracle_on_random_rotations() {
        // Oracle: Z-Y-X factorisation done longhand from the matrix entries.
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        for _ in 0..300 {
            let t = random_transform(&mut rng);
            let r = t.rotation();
            let yaw_oracle = r[(1, 0)].atan2(r[(0, 0)]);
            match t.yaw() {
                Ok(yaw) => assert_abs_diff_eq!(yaw, half_open_pi(yaw_oracle), epsilon = 1e-9),
                Err(Se3Error::GimbalLock(_)) => {
                    assert!((r[(2, 0)].abs() - 1.0).abs() < 1e-5);
                }
                Err(e) => panic!("unexpected error {e}"),
            }
        }
    }

    #[test]
    fn yaw_gimbal_lock_flagged() {
        let t = RigidTransform::from_euler(0.1, std::f64::consts::FRAC_PI_2, 0.4, Vector3::zeros());
        assert!(matches!(t.yaw(), Err(Se3Error::GimbalLock(_))));
    }

    #[test]
    fn rotation_magnitude_examples() {
        assert_eq!(RigidTransform::identity().rotation_magnitude(), 0.0);

        let yaw90 =
            RigidTransform::from_euler(0.0, 0.0, std::f64::consts::FRAC_PI_2, Vector3::zeros());
        assert_abs_diff_eq!(
            yaw90.rotation_magnitude(),
            std::f64::consts::FRAC_PI_2,
            epsilon = 1e-12
        );

        // Composed roll 0.1 + pitch 0.1 against the trace-formula oracle.
        let t = RigidTransform::from_euler(0.1, 0.1, 0.0, Vector3::zeros());
        let oracle = ((t.rotation().trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos();
        assert_abs_diff_eq!(t.rotation_magnitude(), oracle, epsilon = 1e-9);
    }

    #[test]
    fn axis_angle_round_trip() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for _ in 0..300 {
            let t = random_transform(&mut rng);
            let aa = t.axis_angle();
            if aa.angle() > std::f64::consts::PI - 1e-6 {
                continue; // round trip only guaranteed away from pi
            }
            assert_abs_diff_eq!(aa.exp(), *t.rotation(), epsilon = 1e-9);
        }
    }

    #[test]
    fn axis_angle_near_pi_still_recovers_rotation() {
        let axis = Vector3::new(1.0, 2.0, -0.5).normalize();
        let aa = AxisAngle::new(axis * (std::f64::consts::PI - 1e-9));
        let r = aa.exp();
        let back = AxisAngle::log(&r);
        // Axis sign may flip at pi; compare the rotations themselves.
        assert_abs_diff_eq!(back.exp(), r, epsilon = 1e-6);
    }

    #[test]
    fn construction_rejects_bad_rotation() {
        let bad = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 1e-4, 0.0, 0.0, 1.0);
        assert!(matches!(
            RigidTransform::new(bad, Vector3::zeros()),
            Err(Se3Error::NotOrthonormal { .. })
        ));
        let reflection = Matrix3::new(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(matches!(
            RigidTransform::new(reflection, Vector3::zeros()),
            Err(Se3Error::NotProperRotation { .. })
        ));
    }

    #[test]
    fn long_compose_chain_stays_orthonormal() {
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let step = random_transform(&mut rng);
        let mut acc = RigidTransform::identity();
        for _ in 0..200_000 {
            acc = acc.compose(&step);
        }
        assert!(orthonormality_defect(acc.rotation()) <= 1e-9 * 4.0);
    }

    proptest! {
        #[test]
        fn compose_is_associative(seed in 0u64..5000) {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let a = random_transform(&mut rng);
            let b = random_transform(&mut rng);
            let c = random_transform(&mut rng);
            let left = a.compose(&b).compose(&c);
            let right = a.compose(&b.compose(&c));
            prop_assert!((left.rotation() - right.rotation()).norm() < 1e-9);
            prop_assert!((left.translation() - right.translation()).norm() < 1e-9);
        }

        #[test]
        fn invert_is_involution(seed in 0u64..5000) {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let t = random_transform(&mut rng);
            let back = t.invert().invert();
            prop_assert!((back.rotation() - t.rotation()).norm() < 1e-9);
            prop_assert!((back.translation() - t.translation()).norm() < 1e-9);
        }

        #[test]
        fn yaw_of_pure_yaw_recovers_angle(psi in -3.1f64..3.1) {
            let t = RigidTransform::from_euler(0.0, 0.0, psi, Vector3::zeros());
            prop_assert!((t.yaw().unwrap() - psi).abs() < 1e-12);
        }

        #[test]
        fn rotation_magnitude_invariant_under_conjugation(seed in 0u64..5000) {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let t = random_transform(&mut rng);
            let q = random_transform(&mut rng);
            let conj = q.compose(&t).compose(&q.invert());
            prop_assert!((conj.rotation_magnitude() - t.rotation_magnitude()).abs() < 1e-9);
        }
    }
}
