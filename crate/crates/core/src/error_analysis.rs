//! First-order error propagation for the compass and residual-error metrics.
//!
//! Radians internally; the `*_deg` helpers and [`ResidualError`] use degrees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::geometry::{exp_so3, rotation_angle, RigidMotion, Rot3, Vec3};
use crate::sensor_sim::FieldSpec;

/// Small-angle error `ε = [α β γ]` with `R_n = R·exp([ε]^∧)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationResult {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub norm: f64,
}

impl PerturbationResult {
    fn new(alpha: f64, beta: f64, gamma: f64) -> Self {
        Self {
            alpha,
            beta,
            gamma,
            norm: (alpha * alpha + beta * beta + gamma * gamma).sqrt(),
        }
    }

    pub fn as_vec(&self) -> Vec3 {
        Vec3::new(self.alpha, self.beta, self.gamma)
    }

    pub fn to_degrees(&self) -> [f64; 4] {
        [
            self.alpha.to_degrees(),
            self.beta.to_degrees(),
            self.gamma.to_degrees(),
            self.norm.to_degrees(),
        ]
    }
}

/// First-order angles for readings `a_n = gRe₃ + Δa`, `b_n = B0·Re₁ + Δb`:
///
/// ```text
/// α = −e₂ᵀRᵀΔa / ‖a_n‖
/// β =  e₁ᵀRᵀΔa / ‖a_n‖
/// γ = (g·e₂ᵀRᵀΔb − e₁ᵀRᵀ(Δa × Δb)) / ‖a_n × b_n‖
/// ```
pub fn perturbation_angles(r: &Rot3, delta_a: &Vec3, delta_b: &Vec3, fields: &FieldSpec) -> PerturbationResult {
    let rt = r.transpose();
    let a_n = r * &Vec3::new(0.0, 0.0, fields.g) + delta_a;
    let b_n = r * &Vec3::new(fields.b0, 0.0, 0.0) + delta_b;
    let da = &rt * delta_a;
    let db = &rt * delta_b;
    let dadb = &rt * &delta_a.cross(delta_b);
    let an = a_n.norm();
    let alpha = -da.y / an;
    let beta = da.x / an;
    let gamma = (fields.g * db.y - dadb.x) / a_n.cross(&b_n).norm();
    PerturbationResult::new(alpha, beta, gamma)
}

/// Closed-form RMS error norm at `R = I`: `√(2(σ_a/g)² + (σ_b/B0)²)`, radians.
pub fn expected_error_norm_closed_form(sigma_a: f64, sigma_b: f64, fields: &FieldSpec) -> f64 {
    let ta = sigma_a / fields.g;
    let tb = sigma_b / fields.b0;
    (2.0 * ta * ta + tb * tb).sqrt()
}

/// Monte Carlo RMS of `‖ε‖` over `draws` Gaussian perturbations, radians.
pub fn expected_error_norm_monte_carlo(
    sigma_a: f64,
    sigma_b: f64,
    fields: &FieldSpec,
    r: &Rot3,
    draws: usize,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |s: f64| -> Vec3 {
        let mut one = || -> f64 { StandardNormal.sample(&mut rng) };
        Vec3::new(one() * s, one() * s, one() * s)
    };
    let mut sum2 = 0.0;
    for _ in 0..draws {
        let da = draw(sigma_a);
        let db = draw(sigma_b);
        sum2 += perturbation_angles(r, &da, &db, fields).norm.powi(2);
    }
    (sum2 / draws.max(1) as f64).sqrt()
}

const MONTE_CARLO_DRAWS: usize = 10_000;
const MONTE_CARLO_SEED: u64 = 0x5eed;

/// Expected RMS angular error in degrees for per-channel noise `σ_a`, `σ_b`.
/// Closed form at `R = I`, fixed-seed Monte Carlo otherwise.
pub fn expected_error_norm(sigma_a: f64, sigma_b: f64, fields: &FieldSpec, r: &Rot3) -> Result<f64> {
    if sigma_a < 0.0 || sigma_b < 0.0 {
        return Err(Error::InvalidArgument("noise sigmas must be non-negative".into()));
    }
    let rad = if rotation_angle(r) < 1e-12 {
        expected_error_norm_closed_form(sigma_a, sigma_b, fields)
    } else {
        expected_error_norm_monte_carlo(sigma_a, sigma_b, fields, r, MONTE_CARLO_DRAWS, MONTE_CARLO_SEED)
    };
    Ok(rad.to_degrees())
}

/// Error norm (degrees) with a kinematic acceleration spike folded into the
/// accelerometer perturbation. Both the base perturbation and the spike are
/// in units of g; the spike is split equally over the three axes (`/√3`).
/// The magnetometer perturbation is `[0, σ_b, σ_b]`, `R = I`.
pub fn kinematic_spike_error(base_delta_a: f64, spike: f64, sigma_b: f64, fields: &FieldSpec) -> Result<f64> {
    if base_delta_a < 0.0 || spike < 0.0 || sigma_b < 0.0 {
        return Err(Error::InvalidArgument("inputs must be non-negative".into()));
    }
    Ok(spike_angles(base_delta_a, spike, sigma_b, fields).norm.to_degrees())
}

/// Per-axis angles behind [`kinematic_spike_error`].
pub fn spike_angles(base_delta_a: f64, spike: f64, sigma_b: f64, fields: &FieldSpec) -> PerturbationResult {
    let per_axis = (base_delta_a + spike / 3f64.sqrt()) * fields.g;
    let da = Vec3::new(per_axis, per_axis, per_axis);
    let db = Vec3::new(0.0, sigma_b, sigma_b);
    perturbation_angles(&Rot3::identity(), &da, &db, fields)
}

/// Residual between an estimated and a true rigid motion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualError {
    /// degrees, in `[0, 180]`
    pub eps_rotation: f64,
    /// mm, or pixels when a pixel size was supplied
    pub eps_translation: f64,
}

/// `ε_R = ∠(R_trueᵀ R_est)`, `ε_r = ‖r_est − r_true‖₂ [/ pixel_mm]`.
pub fn residual_error(estimated: &RigidMotion, truth: &RigidMotion, pixel_mm: Option<f64>) -> ResidualError {
    let r_res = truth.rotation.transpose() * estimated.rotation;
    let t = (estimated.translation - truth.translation).norm();
    ResidualError {
        eps_rotation: rotation_angle(&r_res).to_degrees(),
        eps_translation: pixel_mm.map_or(t, |p| t / p),
    }
}

/// Angles read from the two triangles of `Rᵀ R_n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriangleConsistency {
    pub upper: Vec3,
    pub lower: Vec3,
    pub max_discrepancy: f64,
    pub passed: bool,
}

/// Builds `R_n = R·exp(ε)`, reads `(α, β, γ)` from the upper and lower triangles of
/// `RᵀR_n` and checks they agree within 10% of `‖ε‖`.
pub fn error_matrix_consistency(r: &Rot3, eps: &Vec3) -> Result<TriangleConsistency> {
    if eps.norm() > 0.05 * (1.0 + 1e-12) {
        return Err(Error::InvalidArgument(format!(
            "perturbation norm {} exceeds 0.05 rad",
            eps.norm()
        )));
    }
    let rn = *r * exp_so3(eps);
    let m = (r.transpose() * rn).into_matrix();
    let upper = Vec3::new(-m[(1, 2)], m[(0, 2)], -m[(0, 1)]);
    let lower = Vec3::new(m[(2, 1)], -m[(2, 0)], m[(1, 0)]);
    let max_discrepancy = (upper - lower).abs().max();
    Ok(TriangleConsistency {
        upper,
        lower,
        max_discrepancy,
        passed: max_discrepancy <= 0.1 * eps.norm() + 1e-12,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compass::estimate;
    use crate::geometry::exp_so3;
    use crate::sensor_sim::SensorSample;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::PI;

    fn random_rotation(rng: &mut impl Rng) -> Rot3 {
        let v = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        exp_so3(&(v.normalize() * rng.random_range(0.0..PI)))
    }

    #[test]
    fn zero_perturbation() {
        let p = perturbation_angles(&Rot3::identity(), &Vec3::zeros(), &Vec3::zeros(), &FieldSpec::default());
        assert_eq!(p.norm, 0.0);
        assert_eq!((p.alpha, p.beta, p.gamma), (0.0, 0.0, 0.0));
    }

    #[test]
    fn one_percent_g_base_case() {
        let f = FieldSpec::default();
        let da = Vec3::new(1.0, 1.0, 1.0) * 0.01 * f.g;
        let db = Vec3::new(0.0, 0.0012, 0.0012);
        let [a, b, g, n] = perturbation_angles(&Rot3::identity(), &da, &db, &f).to_degrees();
        assert!((a + 0.57).abs() < 0.02, "{a}");
        assert!((b - 0.57).abs() < 0.02, "{b}");
        assert!((g - 0.02).abs() < 0.02, "{g}");
        assert!((n - 0.8).abs() < 0.03, "{n}");
    }

    #[test]
    fn first_order_matches_compass() {
        let f = FieldSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..100 {
            let r = random_rotation(&mut rng);
            let da = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * 1e-4 * f.g;
            let db = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * 1e-4 * f.b0;
            let clean = SensorSample { t: 0.0, accel: r * f.gravity(), mag: r * f.static_field() };
            let noisy = SensorSample { t: 0.0, accel: clean.accel + da, mag: clean.mag + db };
            let angle = estimate(&clean, &f).unwrap().angle_to(&estimate(&noisy, &f).unwrap());
            let predicted = perturbation_angles(&r, &da, &db, &f).norm;
            assert!((angle / predicted - 1.0).abs() < 0.01, "{angle} vs {predicted}");
        }
    }

    #[test]
    fn perturbation_is_linear_to_first_order() {
        let f = FieldSpec::default();
        let r = exp_so3(&Vec3::new(0.4, -0.2, 1.1));
        let da = Vec3::new(3e-4, -7e-4, 5e-4) * f.g;
        let db = Vec3::new(-2e-4, 6e-4, 4e-4) * f.b0;
        let one = perturbation_angles(&r, &da, &db, &f);
        let two = perturbation_angles(&r, &(da * 2.0), &(db * 2.0), &f);
        assert!((two.alpha / one.alpha - 2.0).abs() < 0.02);
        assert!((two.beta / one.beta - 2.0).abs() < 0.02);
    }

    #[test]
    fn expected_norm_reference_value() {
        let f = FieldSpec::default();
        let deg = expected_error_norm(0.05, 0.0012, &f, &Rot3::identity()).unwrap();
        assert!((deg - 0.41).abs() < 0.01, "{deg}");
        assert_eq!(expected_error_norm(0.0, 0.0, &f, &Rot3::identity()).unwrap(), 0.0);
        assert!(expected_error_norm(-1.0, 0.0, &f, &Rot3::identity()).is_err());
    }

    #[test]
    fn closed_form_vs_monte_carlo() {
        let f = FieldSpec::default();
        let closed = expected_error_norm_closed_form(0.05, 0.0012, &f);
        let mc = expected_error_norm_monte_carlo(0.05, 0.0012, &f, &Rot3::identity(), 10_000, 3);
        assert!((mc / closed - 1.0).abs() < 0.02, "{mc} vs {closed}");
        // rotation invariance under isotropic noise
        let r = exp_so3(&Vec3::new(0.5, 1.0, -0.3));
        let general = expected_error_norm(0.05, 0.0012, &f, &r).unwrap();
        assert!((general / closed.to_degrees() - 1.0).abs() < 0.03);
    }

    #[test]
    fn gamma_below_tilt_under_isotropic_noise() {
        let f = FieldSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (mut sa, mut sg) = (0.0, 0.0);
        for _ in 0..10_000 {
            let mut n = || -> f64 { StandardNormal.sample(&mut rng) };
            let da = Vec3::new(n(), n(), n()) * 0.05;
            let db = Vec3::new(n(), n(), n()) * 0.0012;
            let p = perturbation_angles(&Rot3::identity(), &da, &db, &f);
            sa += p.alpha.abs();
            sg += p.gamma.abs();
        }
        assert!(sg < sa);
    }

    #[test]
    fn spike_examples() {
        let f = FieldSpec::default();
        let base = kinematic_spike_error(0.01, 0.0, 0.0012, &f).unwrap();
        assert!((base - 0.8).abs() < 0.03, "{base}");
        let spike = kinematic_spike_error(0.01, 0.06, 0.0012, &f).unwrap();
        assert!((spike - 3.5).abs() < 0.3, "{spike}");
        let mut prev = -1.0;
        for i in 0..20 {
            let v = kinematic_spike_error(0.01, i as f64 * 0.01, 0.0012, &f).unwrap();
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn residual_examples() {
        let m = RigidMotion::new(exp_so3(&Vec3::new(0.1, 0.2, 0.3)), Vec3::new(1.0, 2.0, 3.0));
        let e = residual_error(&m, &m, None);
        assert!(e.eps_rotation.abs() < 1e-6 && e.eps_translation == 0.0);

        let est = RigidMotion::new(exp_so3(&Vec3::new(0.0, 0.0, 5f64.to_radians())), Vec3::new(2.0, 0.0, 0.0));
        let e = residual_error(&est, &RigidMotion::identity(), Some(1.0));
        assert!((e.eps_rotation - 5.0).abs() < 1e-9);
        assert!((e.eps_translation - 2.0).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let a = RigidMotion::new(random_rotation(&mut rng), Vec3::new(rng.random(), rng.random(), rng.random()));
            let b = RigidMotion::new(random_rotation(&mut rng), Vec3::new(rng.random(), rng.random(), rng.random()));
            let ab = residual_error(&a, &b, None);
            let ba = residual_error(&b, &a, None);
            assert!((ab.eps_rotation - ba.eps_rotation).abs() < 1e-9);
            assert!((ab.eps_translation - ba.eps_translation).abs() < 1e-12);
        }
    }

    #[test]
    fn triangle_consistency() {
        let r = exp_so3(&Vec3::new(0.3, 0.1, -0.7));
        let c = error_matrix_consistency(&r, &Vec3::zeros()).unwrap();
        assert!(c.max_discrepancy < 1e-14 && c.passed);
        let c = error_matrix_consistency(&r, &Vec3::new(0.01, 0.0, 0.0)).unwrap();
        assert!(c.max_discrepancy < 1e-4 && c.passed);

        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..100 {
            let r = random_rotation(&mut rng);
            let dir = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let c = error_matrix_consistency(&r, &(dir.normalize() * 0.05)).unwrap();
            assert!(c.passed, "{c:?}");
        }
        assert!(error_matrix_consistency(&r, &Vec3::new(0.1, 0.0, 0.0)).is_err());
    }
}
