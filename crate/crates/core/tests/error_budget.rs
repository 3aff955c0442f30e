use moco_core::calibration::snr_gain_db;
use moco_core::error_analysis::*;
use moco_core::geometry::{exp_so3, Rot3};
use moco_core::sensor_sim::FieldSpec;
use moco_core::Vec3;

const SIGMA_A: f64 = 0.05;
const SIGMA_B: f64 = 0.0012;
/// per-axis accelerometer perturbation of the worked example, in g
const BASE_DELTA_A: f64 = 0.01;

#[test]
fn noise_budget_is_041_degrees() {
    let e = expected_error_norm(SIGMA_A, SIGMA_B, &FieldSpec::default(), &Rot3::identity()).unwrap();
    assert!((e - 0.41).abs() < 0.01, "{e}");
}

#[test]
fn monte_carlo_agrees_with_closed_form() {
    let f = FieldSpec::default();
    let closed = expected_error_norm_closed_form(SIGMA_A, SIGMA_B, &f);
    let mc = expected_error_norm_monte_carlo(SIGMA_A, SIGMA_B, &f, &Rot3::identity(), 10_000, 1);
    assert!((mc / closed - 1.0).abs() < 0.1, "mc {mc} closed {closed}");
    // the budget does not depend on head pose to first order
    let tilted = exp_so3(&Vec3::new(0.3, -0.2, 0.5));
    let mc_tilted = expected_error_norm_monte_carlo(SIGMA_A, SIGMA_B, &f, &tilted, 10_000, 2);
    assert!((mc_tilted / closed - 1.0).abs() < 0.1, "tilted mc {mc_tilted}");
}

#[test]
fn one_percent_g_per_axis_perturbation() {
    let f = FieldSpec::default();
    let da = Vec3::new(1.0, 1.0, 1.0) * BASE_DELTA_A * f.g;
    let db = Vec3::new(0.0, SIGMA_B, SIGMA_B);
    let [a, b, g, n] = perturbation_angles(&Rot3::identity(), &da, &db, &f).to_degrees();
    assert!((a + 0.57).abs() < 0.02 && (b - 0.57).abs() < 0.02 && (g - 0.02).abs() < 0.02, "{a} {b} {g}");
    assert!((n - 0.8).abs() < 0.03, "{n}");
}

#[test]
fn kinematic_spike_dominates() {
    let f = FieldSpec::default();
    let e = kinematic_spike_error(BASE_DELTA_A, 0.06, SIGMA_B, &f).unwrap();
    assert!((e - 3.5).abs() < 0.3, "{e}");
    let quiet = kinematic_spike_error(BASE_DELTA_A, 0.0, SIGMA_B, &f).unwrap();
    assert!(e > 4.0 * quiet);
}

#[test]
fn averaging_gain() {
    assert!((snr_gain_db(3000).unwrap() - 17.39).abs() < 0.05);
    assert_eq!(snr_gain_db(1).unwrap(), 0.0);
    assert!(snr_gain_db(0).is_err());
}

#[test]
fn small_angle_error_matrix_is_consistent() {
    for (i, eps) in [Vec3::new(0.01, 0.0, 0.0), Vec3::new(0.002, -0.004, 0.003), Vec3::new(0.0, 0.0, 0.02)].iter().enumerate() {
        let r = exp_so3(&Vec3::new(0.2 * i as f64, 0.4, -0.1));
        let c = error_matrix_consistency(&r, eps).unwrap();
        assert!(c.passed, "{c:?}");
        assert!((c.upper - eps).norm() < 0.05 * eps.norm(), "{c:?}");
    }
}
