//! Rotation-group and vector primitives.
//!
//! [`Rot3`] is a thin value type over a 3x3 matrix that is kept on SO(3).
//! Vectors use nalgebra's [`Vector3`] directly.

use std::f64::consts::PI;
use std::fmt;
use std::ops::Mul;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Tolerance used when validating rotation matrices.
pub const ROT_TOL: f64 = 1e-9;

/// Below this angle Rodrigues' coefficients switch to their Taylor expansions.
const SMALL_ANGLE: f64 = 1e-7;

/// A proper rotation matrix.
#[derive(Clone, Copy, PartialEq)]
pub struct Rot3(Mat3);

impl fmt::Debug for Rot3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = &self.0;
        write!(
            f,
            "Rot3[[{:.6}, {:.6}, {:.6}], [{:.6}, {:.6}, {:.6}], [{:.6}, {:.6}, {:.6}]]",
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)]
        )
    }
}

impl Default for Rot3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rot3 {
    pub fn identity() -> Self {
        Rot3(Mat3::identity())
    }

    /// Wraps a matrix after checking `RᵀR = I` and `det R = +1` within [`ROT_TOL`].
    pub fn from_matrix(m: Mat3) -> Result<Self> {
        let r = Rot3(m);
        if r.is_valid(ROT_TOL) {
            Ok(r)
        } else {
            Err(Error::InvalidArgument(format!(
                "matrix is not a rotation: orthogonality error {:e}, det {}",
                r.orthogonality_error(),
                m.determinant()
            )))
        }
    }

    /// Wraps a matrix that is known to be a rotation by construction.
    pub fn from_matrix_unchecked(m: Mat3) -> Self {
        Rot3(m)
    }

    /// Row-major constructor, validated.
    pub fn from_rows(rows: [[f64; 3]; 3]) -> Result<Self> {
        Self::from_matrix(Mat3::from_fn(|i, j| rows[i][j]))
    }

    /// Rotation from an axis-angle vector (radians).
    pub fn from_axis_angle(v: &Vec3) -> Self {
        exp_so3(v)
    }

    /// Axis-angle vector of this rotation, norm in `[0, π]`.
    pub fn to_axis_angle(&self) -> Vec3 {
        log_so3(self)
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn into_matrix(self) -> Mat3 {
        self.0
    }

    pub fn transpose(&self) -> Self {
        Rot3(self.0.transpose())
    }

    /// Row-major copy of the entries.
    pub fn to_rows(&self) -> [[f64; 3]; 3] {
        let m = &self.0;
        std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)]))
    }

    pub fn column(&self, j: usize) -> Vec3 {
        self.0.column(j).into_owned()
    }

    /// Frobenius norm of `RᵀR − I`.
    pub fn orthogonality_error(&self) -> f64 {
        (self.0.transpose() * self.0 - Mat3::identity()).norm()
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        self.0.iter().all(|v| v.is_finite())
            && self.orthogonality_error() < tol
            && (self.0.determinant() - 1.0).abs() < tol
    }

    /// Angle of the rotation, see [`rotation_angle`].
    pub fn angle(&self) -> f64 {
        rotation_angle(self)
    }

    /// Angle of `selfᵀ · other`, the geodesic distance on SO(3).
    pub fn angle_to(&self, other: &Rot3) -> f64 {
        rotation_angle(&(self.transpose() * *other))
    }
}

impl Mul for Rot3 {
    type Output = Rot3;
    fn mul(self, rhs: Rot3) -> Rot3 {
        Rot3(self.0 * rhs.0)
    }
}

impl Mul<Vec3> for Rot3 {
    type Output = Vec3;
    fn mul(self, rhs: Vec3) -> Vec3 {
        self.0 * rhs
    }
}

impl Mul<&Vec3> for &Rot3 {
    type Output = Vec3;
    fn mul(self, rhs: &Vec3) -> Vec3 {
        self.0 * rhs
    }
}

/// Rigid transform `x ↦ R x + r`; translation in millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RigidMotion {
    pub rotation: Rot3,
    pub translation: Vec3,
}

impl RigidMotion {
    pub fn new(rotation: Rot3, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn apply(&self, x: &Vec3) -> Vec3 {
        &self.rotation * x + self.translation
    }

    /// Inverse transform `y ↦ Rᵀ(y − r)`.
    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(&rt * &self.translation),
        }
    }
}

/// Cross-product matrix: `skew(v) * w == v × w`.
#[rustfmt::skip]
pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(
         0.0, -v.z,  v.y,
         v.z,  0.0, -v.x,
        -v.y,  v.x,  0.0,
    )
}

/// Inverse of [`skew`]; reads the antisymmetric part only.
pub fn vee(m: &Mat3) -> Vec3 {
    Vec3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}

/// Exponential map so(3) → SO(3) via Rodrigues' formula.
pub fn exp_so3(v: &Vec3) -> Rot3 {
    let theta2 = v.norm_squared();
    let theta = theta2.sqrt();
    let (a, b) = if theta < SMALL_ANGLE {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    let k = skew(v);
    Rot3(Mat3::identity() + k * a + k * k * b)
}

/// Logarithm map SO(3) → so(3); returns an axis-angle vector with norm in `[0, π]`.
pub fn log_so3(r: &Rot3) -> Vec3 {
    let theta = rotation_angle(r);
    let m = r.matrix();
    if theta < SMALL_ANGLE {
        return vee(m) * (1.0 + theta * theta / 6.0);
    }
    if PI - theta > 1e-4 {
        return vee(m) * (theta / theta.sin());
    }
    // Near π the antisymmetric part vanishes; the symmetric part is cos θ·I + (1 − cos θ)·n nᵀ.
    let c = theta.cos();
    let s = ((m + m.transpose()) * 0.5 - Mat3::identity() * c) / (1.0 - c);
    let col = (0..3)
        .max_by(|&i, &j| s[(i, i)].total_cmp(&s[(j, j)]))
        .unwrap_or(0);
    let mut axis = s.column(col).into_owned();
    axis /= axis.norm();
    // Resolve the sign using the (small) antisymmetric part.
    let w = vee(m);
    if w.dot(&axis) < 0.0 {
        axis = -axis;
    }
    axis * theta
}

/// Rotation angle in `[0, π]`: `atan2(sin θ, cos θ)` with `sin θ = ‖vee(R)‖` and
/// `cos θ = (tr R − 1)/2`, accurate near both 0 and π.
pub fn rotation_angle(r: &Rot3) -> f64 {
    let c = 0.5 * (r.matrix().trace() - 1.0);
    vee(r.matrix()).norm().atan2(c)
}

/// Fixed permutation that takes a NED-referenced orientation to the scanner (DCS) frame.
#[rustfmt::skip]
pub fn ned_to_dcs_permutation() -> Rot3 {
    Rot3(Mat3::new(
        0.0,  0.0, -1.0,
        1.0,  0.0,  0.0,
        0.0, -1.0,  0.0,
    ))
}

/// Right-multiplies by [`ned_to_dcs_permutation`].
pub fn ned_to_dcs(r_ned: &Rot3) -> Rot3 {
    *r_ned * ned_to_dcs_permutation()
}

/// `(R0ᵀ Rt)ᵀ`: orientation at `t` relative to the initial estimate.
pub fn normalize_to_initial(r0: &Rot3, rt: &Rot3) -> Rot3 {
    (r0.transpose() * *rt).transpose()
}

/// Geodesic interpolation `a · exp(s · log(aᵀ b))`, `s ∈ [0, 1]`.
pub fn geodesic_interpolate(a: &Rot3, b: &Rot3, s: f64) -> Rot3 {
    let rel = log_so3(&(a.transpose() * *b));
    *a * exp_so3(&(rel * s))
}

pub fn deg(rad: f64) -> f64 {
    rad.to_degrees()
}

pub fn rad(deg: f64) -> f64 {
    deg.to_radians()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_rotation(rng: &mut impl Rng) -> Rot3 {
        let axis = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let angle = rng.random_range(0.0..PI);
        exp_so3(&(axis.normalize() * angle))
    }

    // Independent oracle: truncated power series of the matrix exponential.
    fn exp_series(v: &Vec3, terms: usize) -> Mat3 {
        let k = skew(v);
        let mut term = Mat3::identity();
        let mut sum = Mat3::identity();
        for n in 1..terms {
            term = term * k / n as f64;
            sum += term;
        }
        sum
    }

    #[test]
    fn skew_examples() {
        let s = skew(&Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(s, Mat3::new(0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0));
        assert_eq!(skew(&Vec3::zeros()), Mat3::zeros());
        let v = Vec3::new(1.0, 2.0, 3.0);
        assert_eq!(skew(&v) * v, Vec3::zeros());
    }

    #[test]
    fn exp_examples() {
        let r = exp_so3(&Vec3::new(0.0, 0.0, PI / 2.0));
        let y = r * Vec3::x();
        assert_relative_eq!(y, Vec3::y(), epsilon = 1e-15);
        assert_eq!(exp_so3(&Vec3::zeros()), Rot3::identity());

        let v = Vec3::new(0.1, 0.2, -0.05);
        let series = exp_series(&v, 20);
        assert!((exp_so3(&v).matrix() - series).abs().max() < 1e-10);
    }

    #[test]
    fn exp_small_angle_branch_matches_series() {
        let v = Vec3::new(3e-8, -2e-8, 1e-8);
        let series = exp_series(&v, 6);
        assert!((exp_so3(&v).matrix() - series).abs().max() < 1e-15);
    }

    #[test]
    fn angle_examples() {
        assert_eq!(rotation_angle(&Rot3::identity()), 0.0);
        let r = exp_so3(&Vec3::new(0.0, 0.0, 0.7));
        assert_relative_eq!(rotation_angle(&r), 0.7, epsilon = 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let dir = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            )
            .normalize();
            let v = dir * rng.random_range(0.0..PI - 1e-3);
            assert_relative_eq!(rotation_angle(&exp_so3(&v)), v.norm(), epsilon = 1e-7);
        }
    }

    #[test]
    fn angle_clamps_trace_overshoot() {
        let mut m = Mat3::identity();
        m[(0, 0)] += 1e-15;
        m[(1, 1)] += 1e-15;
        let r = Rot3::from_matrix_unchecked(m);
        assert_eq!(rotation_angle(&r), 0.0);
    }

    #[test]
    fn ned_to_dcs_examples() {
        let p = ned_to_dcs(&Rot3::identity());
        assert_eq!(
            p.to_rows(),
            [[0.0, 0.0, -1.0], [1.0, 0.0, 0.0], [0.0, -1.0, 0.0]]
        );
        assert!(p.is_valid(1e-15));

        // P applied twice is not the identity; P³ equals the direct matrix product.
        let twice = ned_to_dcs(&p);
        assert!((twice.matrix() - Mat3::identity()).norm() > 1.0);
        let pm = ned_to_dcs_permutation().into_matrix();
        let thrice = ned_to_dcs(&twice);
        assert_eq!(*thrice.matrix(), pm * pm * pm);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            assert!(ned_to_dcs(&random_rotation(&mut rng)).is_valid(ROT_TOL));
        }
    }

    #[test]
    fn normalize_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r = random_rotation(&mut rng);
        assert!((normalize_to_initial(&r, &r).matrix() - Mat3::identity()).norm() < 1e-12);
        assert_eq!(normalize_to_initial(&Rot3::identity(), &r), r.transpose());

        let r0 = random_rotation(&mut rng);
        let q = random_rotation(&mut rng);
        let rt = r0 * q.transpose();
        assert!((normalize_to_initial(&r0, &rt).matrix() - q.matrix()).norm() < 1e-12);
    }

    #[test]
    fn normalize_preserves_relative_angle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let r0 = random_rotation(&mut rng);
            let q = random_rotation(&mut rng);
            let out = normalize_to_initial(&r0, &(r0 * q.transpose()));
            assert_relative_eq!(rotation_angle(&out), rotation_angle(&q), epsilon = 1e-7);
        }
    }

    #[test]
    fn log_near_pi() {
        let axis = Vec3::new(1.0, -2.0, 0.5).normalize();
        for angle in [PI - 1e-3, PI - 1e-6, PI] {
            let r = exp_so3(&(axis * angle));
            let back = exp_so3(&log_so3(&r));
            assert!((back.matrix() - r.matrix()).norm() < 1e-9);
        }
    }

    #[test]
    fn rigid_motion_inverse() {
        let m = RigidMotion::new(exp_so3(&Vec3::new(0.2, -0.1, 0.3)), Vec3::new(1.0, 2.0, 3.0));
        let x = Vec3::new(-4.0, 0.5, 2.0);
        assert_relative_eq!(m.inverse().apply(&m.apply(&x)), x, epsilon = 1e-12);
    }

    #[test]
    fn geodesic_interpolation_endpoints() {
        let a = exp_so3(&Vec3::new(0.1, 0.2, 0.3));
        let b = exp_so3(&Vec3::new(-0.4, 0.0, 0.9));
        assert!((geodesic_interpolate(&a, &b, 0.0).matrix() - a.matrix()).norm() < 1e-12);
        assert!((geodesic_interpolate(&a, &b, 1.0).matrix() - b.matrix()).norm() < 1e-12);
        let mid = geodesic_interpolate(&a, &b, 0.5);
        assert_relative_eq!(a.angle_to(&mid), mid.angle_to(&b), epsilon = 1e-12);
    }

    fn vec_strategy(max: f64) -> impl Strategy<Value = Vec3> {
        (-max..max, -max..max, -max..max).prop_map(|(x, y, z)| Vec3::new(x, y, z))
    }

    proptest! {
        #[test]
        fn exp_is_always_a_rotation(v in vec_strategy(10.0)) {
            let r = exp_so3(&v);
            prop_assert!(r.orthogonality_error() < 1e-9);
            prop_assert!((r.matrix().determinant() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn exp_log_roundtrip(dir in vec_strategy(1.0), angle in 0.01f64..(PI - 0.01)) {
            prop_assume!(dir.norm() > 1e-3);
            let v = dir.normalize() * angle;
            let back = log_so3(&exp_so3(&v));
            prop_assert!((back - v).norm() < 1e-8);
        }

        #[test]
        fn skew_is_antisymmetric_cross(v in vec_strategy(5.0), w in vec_strategy(5.0)) {
            let s = skew(&v);
            prop_assert_eq!(s, -s.transpose());
            prop_assert!((s * w - v.cross(&w)).norm() < 1e-12);
        }
    }
}
