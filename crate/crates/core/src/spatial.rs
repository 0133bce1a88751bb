//! Rotation, quaternion and 3-D/6-D vector primitives.
//!
//! Conventions used throughout the crate:
//! - rotations map body coordinates into inertial coordinates (`p_A = R p_B + o`);
//! - angular velocities are expressed in the inertial frame, so `Ṙ = S(ω) R`;
//! - quaternions are stored scalar first and canonicalized to a nonnegative scalar part.

use nalgebra::{Matrix3, Vector3, Vector4};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

const ORTHONORMAL_TOL: f64 = 1e-10;
const UNIT_QUAT_TOL: f64 = 1e-9;
const ANTISYMMETRIC_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpatialError {
    #[error("matrix is not antisymmetric: symmetric part has norm {0:.3e}")]
    NotAntisymmetric(f64),
    #[error("matrix is not a rotation: orthonormality error {ortho:.3e}, det {det}")]
    NotRotation { ortho: f64, det: f64 },
    #[error("quaternion norm {0} is not 1")]
    NonUnitQuaternion(f64),
    #[error("non-finite entry")]
    NonFinite,
}

/// `S(x)` such that `S(x) y = x × y`.
pub fn skew(x: &Vec3) -> Mat3 {
    Matrix3::new(0.0, -x.z, x.y, x.z, 0.0, -x.x, -x.y, x.x, 0.0)
}

/// Inverse of [`skew`]. Rejects matrices whose symmetric part exceeds 1e-8.
pub fn vee(m: &Mat3) -> Result<Vec3, SpatialError> {
    let sym = (m + m.transpose()) * 0.5;
    let err = sym.norm();
    if !err.is_finite() {
        return Err(SpatialError::NonFinite);
    }
    if err > ANTISYMMETRIC_TOL {
        return Err(SpatialError::NotAntisymmetric(err));
    }
    Ok(vee_unchecked(m))
}

fn vee_unchecked(m: &Mat3) -> Vec3 {
    Vector3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}

/// `skew(A) = (A - Aᵀ)/2`.
pub fn skew_part(m: &Mat3) -> Mat3 {
    (m - m.transpose()) * 0.5
}

/// `(skew(A))^∨`, always well defined.
pub fn vee_of_skew_part(m: &Mat3) -> Vec3 {
    vee_unchecked(&skew_part(m))
}

/// A proper orthonormal 3×3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Mat3);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Mat3::identity())
    }

    pub fn new(m: Mat3) -> Result<Self, SpatialError> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(SpatialError::NonFinite);
        }
        let ortho = (m.transpose() * m - Mat3::identity()).amax();
        let det = m.determinant();
        if ortho > ORTHONORMAL_TOL || (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(SpatialError::NotRotation { ortho, det });
        }
        Ok(Rotation(m))
    }

    /// Wraps a matrix assumed orthonormal (e.g. a product of rotations).
    pub(crate) fn from_matrix_unchecked(m: Mat3) -> Self {
        Rotation(m)
    }

    /// Rodrigues' formula; `axis` need not be normalized. A zero axis gives the identity.
    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        let norm = axis.norm();
        if norm == 0.0 {
            return Self::identity();
        }
        let k = skew(&(axis / norm));
        Rotation(Mat3::identity() + k * angle.sin() + k * k * (1.0 - angle.cos()))
    }

    pub fn about_x(angle: f64) -> Self {
        Self::from_axis_angle(&Vec3::x(), angle)
    }

    pub fn about_y(angle: f64) -> Self {
        Self::from_axis_angle(&Vec3::y(), angle)
    }

    pub fn about_z(angle: f64) -> Self {
        Self::from_axis_angle(&Vec3::z(), angle)
    }

    /// URDF roll-pitch-yaw: `Rz(yaw) Ry(pitch) Rx(roll)`.
    pub fn from_rpy(roll: f64, pitch: f64, yaw: f64) -> Self {
        Rotation(Self::about_z(yaw).0 * Self::about_y(pitch).0 * Self::about_x(roll).0)
    }

    /// Inverse of [`Rotation::from_rpy`]; pitch is kept in [-π/2, π/2].
    pub fn to_rpy(&self) -> (f64, f64, f64) {
        let m = &self.0;
        let pitch = (-m[(2, 0)]).clamp(-1.0, 1.0).asin();
        if m[(2, 0)].abs() < 1.0 - 1e-12 {
            let roll = m[(2, 1)].atan2(m[(2, 2)]);
            let yaw = m[(1, 0)].atan2(m[(0, 0)]);
            (roll, pitch, yaw)
        } else {
            // gimbal lock: fold everything into yaw
            let yaw = (-m[(0, 1)]).atan2(m[(1, 1)]);
            (0.0, pitch, yaw)
        }
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Rotation(self.0.transpose())
    }

    pub fn compose(&self, other: &Rotation) -> Self {
        Rotation(self.0 * other.0)
    }

    pub fn apply(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }
}

/// Unit quaternion, scalar part first.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitQuaternion {
    coords: Vector4<f64>,
}

impl UnitQuaternion {
    pub fn identity() -> Self {
        UnitQuaternion {
            coords: Vector4::new(1.0, 0.0, 0.0, 0.0),
        }
    }

    /// Validates the norm and canonicalizes the sign.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Result<Self, SpatialError> {
        let coords = Vector4::new(w, x, y, z);
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(SpatialError::NonFinite);
        }
        let norm = coords.norm();
        if (norm - 1.0).abs() > UNIT_QUAT_TOL {
            return Err(SpatialError::NonUnitQuaternion(norm));
        }
        Ok(Self::canonical(coords / norm))
    }

    /// Projects any nonzero 4-vector onto the unit sphere.
    pub fn normalize(coords: &Vector4<f64>) -> Result<Self, SpatialError> {
        let norm = coords.norm();
        if !norm.is_finite() || norm == 0.0 {
            return Err(SpatialError::NonUnitQuaternion(norm));
        }
        Ok(Self::canonical(coords / norm))
    }

    fn canonical(coords: Vector4<f64>) -> Self {
        if coords[0] < 0.0 {
            UnitQuaternion { coords: -coords }
        } else {
            UnitQuaternion { coords }
        }
    }

    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        let norm = axis.norm();
        if norm == 0.0 {
            return Self::identity();
        }
        let half = 0.5 * angle;
        let v = axis / norm * half.sin();
        Self::canonical(Vector4::new(half.cos(), v.x, v.y, v.z))
    }

    pub fn coords(&self) -> &Vector4<f64> {
        &self.coords
    }

    pub fn scalar(&self) -> f64 {
        self.coords[0]
    }

    pub fn vector(&self) -> Vec3 {
        Vector3::new(self.coords[1], self.coords[2], self.coords[3])
    }

    pub fn to_rotation(&self) -> Rotation {
        let w = self.coords[0];
        let v = self.vector();
        let s = skew(&v);
        Rotation(Mat3::identity() + s * (2.0 * w) + s * s * 2.0)
    }

    /// Shepperd's method, picking the numerically largest pivot.
    pub fn from_rotation(r: &Rotation) -> Self {
        let m = r.matrix();
        let trace = m.trace();
        let candidates = [trace, m[(0, 0)], m[(1, 1)], m[(2, 2)]];
        let pivot = (0..4)
            .max_by(|&a, &b| candidates[a].total_cmp(&candidates[b]))
            .unwrap_or(0);
        let coords = match pivot {
            0 => {
                let s = (1.0 + trace).sqrt() * 2.0;
                Vector4::new(
                    0.25 * s,
                    (m[(2, 1)] - m[(1, 2)]) / s,
                    (m[(0, 2)] - m[(2, 0)]) / s,
                    (m[(1, 0)] - m[(0, 1)]) / s,
                )
            }
            1 => {
                let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
                Vector4::new(
                    (m[(2, 1)] - m[(1, 2)]) / s,
                    0.25 * s,
                    (m[(0, 1)] + m[(1, 0)]) / s,
                    (m[(0, 2)] + m[(2, 0)]) / s,
                )
            }
            2 => {
                let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
                Vector4::new(
                    (m[(0, 2)] - m[(2, 0)]) / s,
                    (m[(0, 1)] + m[(1, 0)]) / s,
                    0.25 * s,
                    (m[(1, 2)] + m[(2, 1)]) / s,
                )
            }
            _ => {
                let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
                Vector4::new(
                    (m[(1, 0)] - m[(0, 1)]) / s,
                    (m[(0, 2)] + m[(2, 0)]) / s,
                    (m[(1, 2)] + m[(2, 1)]) / s,
                    0.25 * s,
                )
            }
        };
        Self::canonical(coords.normalize())
    }

    /// `Q̇ = ½ (0, ω) ⊗ Q` for an inertial-frame angular velocity ω.
    pub fn derivative(&self, omega: &Vec3) -> Vector4<f64> {
        quat_derivative(&self.coords, omega)
    }
}

/// Quaternion kinematics on raw coordinates; used inside the integrator where
/// intermediate stages are not exactly unit length.
pub fn quat_derivative(q: &Vector4<f64>, omega: &Vec3) -> Vector4<f64> {
    let w = q[0];
    let v = Vector3::new(q[1], q[2], q[3]);
    let dw = -0.5 * omega.dot(&v);
    let dv = 0.5 * (omega * w + omega.cross(&v));
    Vector4::new(dw, dv.x, dv.y, dv.z)
}

/// Linear and angular velocity of a frame, inertial orientation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Twist {
    pub linear: Vec3,
    pub angular: Vec3,
}

impl Twist {
    pub fn new(linear: Vec3, angular: Vec3) -> Self {
        Twist { linear, angular }
    }

    pub fn is_finite(&self) -> bool {
        self.linear.iter().chain(self.angular.iter()).all(|v| v.is_finite())
    }
}

/// Force and moment, inertial orientation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Wrench {
    pub force: Vec3,
    pub moment: Vec3,
}

impl Wrench {
    pub fn new(force: Vec3, moment: Vec3) -> Self {
        Wrench { force, moment }
    }

    pub fn is_finite(&self) -> bool {
        self.force.iter().chain(self.moment.iter()).all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn rodrigues_oracle(axis: &Vec3, angle: f64) -> Mat3 {
        // Explicit component form of the Rodrigues rotation.
        let a = axis.normalize();
        let (c, s) = (angle.cos(), angle.sin());
        let t = 1.0 - c;
        Matrix3::new(
            t * a.x * a.x + c,
            t * a.x * a.y - s * a.z,
            t * a.x * a.z + s * a.y,
            t * a.x * a.y + s * a.z,
            t * a.y * a.y + c,
            t * a.y * a.z - s * a.x,
            t * a.x * a.z - s * a.y,
            t * a.y * a.z + s * a.x,
            t * a.z * a.z + c,
        )
    }

    #[test]
    fn skew_basis_case() {
        let r = skew(&Vec3::x()) * Vec3::y();
        assert_eq!(r, Vec3::z());
        assert_eq!(skew(&Vec3::zeros()), Mat3::zeros());
    }

    #[test]
    fn vee_round_trip_and_zero() {
        let x = Vec3::new(1.0, 2.0, 3.0);
        assert_eq!(vee(&skew(&x)).unwrap(), x);
        assert_eq!(vee(&Mat3::zeros()).unwrap(), Vec3::zeros());
    }

    #[test]
    fn vee_rejects_symmetric_part() {
        let mut m = skew(&Vec3::new(1.0, 2.0, 3.0));
        m[(0, 1)] += 1e-3;
        assert!(matches!(vee(&m), Err(SpatialError::NotAntisymmetric(_))));
    }

    #[test]
    fn identity_quaternion_is_identity_rotation() {
        let r = UnitQuaternion::identity().to_rotation();
        assert_eq!(*r.matrix(), Mat3::identity());
    }

    #[test]
    fn quarter_turn_about_z_maps_x_to_y() {
        let q = UnitQuaternion::from_axis_angle(&Vec3::z(), std::f64::consts::FRAC_PI_2);
        let y = q.to_rotation().apply(&Vec3::x());
        assert!((y - Vec3::y()).norm() < 1e-15);
    }

    #[test]
    fn non_unit_quaternion_rejected() {
        assert!(matches!(
            UnitQuaternion::new(1.0, 1.0, 0.0, 0.0),
            Err(SpatialError::NonUnitQuaternion(_))
        ));
    }

    #[test]
    fn canonical_sign_is_nonnegative() {
        let q = UnitQuaternion::new(-1.0, 0.0, 0.0, 0.0).unwrap();
        assert_eq!(q.scalar(), 1.0);
        // 3π/2 about z has a negative scalar part before canonicalization
        let q = UnitQuaternion::from_axis_angle(&Vec3::z(), 3.0 * std::f64::consts::FRAC_PI_2);
        assert!(q.scalar() >= 0.0);
    }

    #[test]
    fn zero_rate_gives_zero_derivative() {
        let q = UnitQuaternion::from_axis_angle(&Vec3::new(1.0, 2.0, -1.0), 0.7);
        assert_eq!(q.derivative(&Vec3::zeros()), Vector4::zeros());
    }

    #[test]
    fn identity_derivative_induces_skew_e3() {
        let q = UnitQuaternion::identity();
        let dq = q.derivative(&Vec3::z());
        let h = 1e-6;
        let plus = UnitQuaternion::normalize(&(q.coords() + dq * h)).unwrap();
        let minus = UnitQuaternion::normalize(&(q.coords() - dq * h)).unwrap();
        let rdot = (plus.to_rotation().matrix() - minus.to_rotation().matrix()) / (2.0 * h);
        assert!((rdot - skew(&Vec3::z())).amax() < 1e-8);
    }

    #[test]
    fn rpy_round_trip() {
        let r = Rotation::from_rpy(0.3, -0.4, 1.2);
        let (roll, pitch, yaw) = r.to_rpy();
        assert!(close(roll, 0.3, 1e-12) && close(pitch, -0.4, 1e-12) && close(yaw, 1.2, 1e-12));
    }

    fn vec3_strategy() -> impl Strategy<Value = Vec3> {
        (-10.0..10.0f64, -10.0..10.0f64, -10.0..10.0f64).prop_map(|(x, y, z)| Vec3::new(x, y, z))
    }

    fn axis_strategy() -> impl Strategy<Value = Vec3> {
        vec3_strategy().prop_filter("nonzero axis", |v| v.norm() > 1e-3)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn skew_matches_cross_product(x in vec3_strategy(), y in vec3_strategy()) {
            let direct = Vec3::new(
                x.y * y.z - x.z * y.y,
                x.z * y.x - x.x * y.z,
                x.x * y.y - x.y * y.x,
            );
            prop_assert!((skew(&x) * y - direct).norm() < 1e-12);
            prop_assert!((skew(&x) * x).norm() < 1e-12);
            let s = skew(&x);
            prop_assert_eq!(s, -s.transpose());
        }

        #[test]
        fn vee_inverts_skew(x in vec3_strategy()) {
            prop_assert_eq!(vee(&skew(&x)).unwrap(), x);
            let s = skew(&x);
            prop_assert_eq!(skew(&vee(&s).unwrap()), s);
        }

        #[test]
        fn quaternion_matches_rodrigues(axis in axis_strategy(), angle in -6.0..6.0f64) {
            let q = UnitQuaternion::from_axis_angle(&axis, angle);
            let r = q.to_rotation();
            prop_assert!((r.matrix() - rodrigues_oracle(&axis, angle)).amax() < 1e-12);
            prop_assert!(Rotation::new(*r.matrix()).is_ok());
            let back = UnitQuaternion::from_rotation(&r);
            prop_assert!((back.coords() - q.coords()).amax() < 1e-10);
            prop_assert!(back.scalar() >= 0.0);
        }

        #[test]
        fn quaternion_derivative_matches_rotation_rate(
            axis in axis_strategy(), angle in -3.0..3.0f64, omega in vec3_strategy()
        ) {
            let q = UnitQuaternion::from_axis_angle(&axis, angle);
            let dq = q.derivative(&omega);
            prop_assert!(q.coords().dot(&dq).abs() < 1e-12);
            let h = 1e-6;
            let plus = UnitQuaternion::normalize(&(q.coords() + dq * h)).unwrap();
            let minus = UnitQuaternion::normalize(&(q.coords() - dq * h)).unwrap();
            // sign canonicalization may flip one side when the scalar part is near zero
            prop_assume!(q.scalar() > 1e-3);
            let rdot = (plus.to_rotation().matrix() - minus.to_rotation().matrix()) / (2.0 * h);
            let expected = skew(&omega) * q.to_rotation().matrix();
            prop_assert!((rdot - expected).amax() < 1e-5 * (1.0 + omega.norm()));
        }
    }
}
