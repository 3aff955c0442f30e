//! Internal (per-sensor) and cross-sensor misalignment calibration.
//!
//! Raw readings follow `m = C·x + c` with `C` symmetric; the magnetometer is
//! additionally rotated by `R_cs` before its internal distortion. Correction
//! undoes the internal model first and then the cross rotation:
//! `accel ← C_a⁻¹(accel − c_a)`, `mag ← R_csᵀ·C_b⁻¹(mag − c_b)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::{exp_so3, log_so3, Mat3, Rot3, Vec3};
use crate::lsq::{damped_gauss_newton, levenberg_marquardt, LeastSquaresProblem, SolverOptions};
use crate::sensor_sim::{FieldSpec, SensorSample};

/// Minimum number of distinct orientations for either solver.
pub const MIN_ORIENTATIONS: usize = 12;

/// Pairwise angular spread below which readings are considered degenerate.
pub const MIN_SPREAD_DEG: f64 = 5.0;

const MAX_CONDITION: f64 = 1e6;

/// Symmetric misalignment matrix and bias of one three-axis sensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InternalCalibration {
    matrix: Mat3,
    bias: Vec3,
    inverse: Mat3,
}

impl InternalCalibration {
    pub fn new(matrix: Mat3, bias: Vec3) -> Result<Self> {
        if (matrix - matrix.transpose()).abs().max() > 1e-12 {
            return Err(Error::InvalidArgument("misalignment matrix must be symmetric".into()));
        }
        let sv = matrix.singular_values();
        let cond = sv.max() / sv.min();
        if !(cond.is_finite() && cond < MAX_CONDITION) {
            return Err(Error::InvalidArgument(format!(
                "misalignment matrix is ill-conditioned (condition number {cond:e})"
            )));
        }
        let inverse = matrix
            .try_inverse()
            .ok_or_else(|| Error::InvalidArgument("misalignment matrix is singular".into()))?;
        Ok(Self { matrix, bias, inverse })
    }

    pub fn identity() -> Self {
        Self {
            matrix: Mat3::identity(),
            bias: Vec3::zeros(),
            inverse: Mat3::identity(),
        }
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.matrix
    }

    pub fn bias(&self) -> &Vec3 {
        &self.bias
    }

    pub fn inverse(&self) -> &Mat3 {
        &self.inverse
    }

    /// `C⁻¹(m − c)`
    pub fn correct(&self, raw: &Vec3) -> Vec3 {
        self.inverse * (raw - self.bias)
    }

    /// `C·x + c`
    pub fn distort(&self, x: &Vec3) -> Vec3 {
        self.matrix * x + self.bias
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossCalibration {
    pub r_cs: Rot3,
}

impl CrossCalibration {
    pub fn identity() -> Self {
        Self { r_cs: Rot3::identity() }
    }

    pub fn from_axis_angle(v: &Vec3) -> Self {
        Self { r_cs: exp_so3(v) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationModel {
    pub accel: InternalCalibration,
    pub mag: InternalCalibration,
    pub cross: CrossCalibration,
}

impl Default for CalibrationModel {
    fn default() -> Self {
        Self::identity()
    }
}

impl CalibrationModel {
    pub fn identity() -> Self {
        Self {
            accel: InternalCalibration::identity(),
            mag: InternalCalibration::identity(),
            cross: CrossCalibration::identity(),
        }
    }
}

/// Undo internal then cross misalignment on one sample.
pub fn apply(model: &CalibrationModel, sample: &SensorSample) -> SensorSample {
    let accel = model.accel.correct(&sample.accel);
    let mag = model.cross.r_cs.transpose() * model.mag.correct(&sample.mag);
    SensorSample {
        t: sample.t,
        accel,
        mag,
    }
}

/// Non-fatal conditions detected while solving.
#[derive(Debug, Clone, PartialEq)]
pub enum CalibrationWarning {
    /// All readings lie within a narrow cone; the fit is poorly conditioned.
    NarrowSpread { max_pairwise_deg: f64 },
    /// The Jacobian at the solution is rank deficient.
    Unobservable { singular_ratio: f64 },
}

#[derive(Debug, Clone)]
pub struct InternalSolution {
    pub calibration: InternalCalibration,
    /// RMS of `‖C⁻¹(mᵢ − c)‖² − ref²`.
    pub residual_rms: f64,
    pub iterations: usize,
    pub warnings: Vec<CalibrationWarning>,
}

#[derive(Debug, Clone)]
pub struct CrossSolution {
    pub cross: CrossCalibration,
    /// RMS of the normalised residual `aᵀ R_csᵀ b / (‖a‖‖b‖) − sin δ`.
    pub residual_rms: f64,
    pub iterations: usize,
    pub warnings: Vec<CalibrationWarning>,
}

fn max_pairwise_angle_deg(dirs: &[Vec3]) -> f64 {
    let mut best: f64 = 0.0;
    for (i, a) in dirs.iter().enumerate() {
        for b in &dirs[i + 1..] {
            let c = (a.dot(b) / (a.norm() * b.norm())).clamp(-1.0, 1.0);
            best = best.max(c.acos().to_degrees());
        }
    }
    best
}

fn unpack_symmetric(x: &DVector<f64>) -> Mat3 {
    Mat3::new(x[0], x[1], x[2], x[1], x[3], x[4], x[2], x[4], x[5])
}

struct EllipsoidProblem<'a> {
    readings: &'a [Vec3],
    ref2: f64,
}

impl EllipsoidProblem<'_> {
    fn split(x: &DVector<f64>) -> Option<(Mat3, Vec3)> {
        let c = unpack_symmetric(x);
        let inv = c.try_inverse()?;
        Some((inv, Vec3::new(x[6], x[7], x[8])))
    }
}

impl LeastSquaresProblem for EllipsoidProblem<'_> {
    fn residuals(&self, x: &DVector<f64>) -> DVector<f64> {
        let n = self.readings.len();
        match Self::split(x) {
            Some((inv, bias)) => DVector::from_iterator(
                n,
                self.readings.iter().map(|m| (inv * (m - bias)).norm_squared() - self.ref2),
            ),
            None => DVector::from_element(n, f64::INFINITY),
        }
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let n = self.readings.len();
        let mut j = DMatrix::zeros(n, 9);
        let Some((inv, bias)) = Self::split(x) else {
            return j;
        };
        for (i, m) in self.readings.iter().enumerate() {
            let u = inv * (m - bias);
            let w = inv * u;
            // d r / d C_jk = −2 wᵀ E_jk u with E symmetric unit perturbation
            j[(i, 0)] = -2.0 * w[0] * u[0];
            j[(i, 1)] = -2.0 * (w[0] * u[1] + w[1] * u[0]);
            j[(i, 2)] = -2.0 * (w[0] * u[2] + w[2] * u[0]);
            j[(i, 3)] = -2.0 * w[1] * u[1];
            j[(i, 4)] = -2.0 * (w[1] * u[2] + w[2] * u[1]);
            j[(i, 5)] = -2.0 * w[2] * u[2];
            // d r / d c = −2 (C⁻¹ u)ᵀ
            j[(i, 6)] = -2.0 * w[0];
            j[(i, 7)] = -2.0 * w[1];
            j[(i, 8)] = -2.0 * w[2];
        }
        j
    }
}

/// `Σᵢ (‖C⁻¹(mᵢ − c)‖² − ref²)²`
pub fn internal_objective(readings: &[Vec3], reference_magnitude: f64, cal: &InternalCalibration) -> f64 {
    let ref2 = reference_magnitude * reference_magnitude;
    readings
        .iter()
        .map(|m| {
            let r = cal.correct(m).norm_squared() - ref2;
            r * r
        })
        .sum()
}

/// Fits a symmetric misalignment matrix and bias so that corrected readings have
/// magnitude `reference_magnitude`. Damped Gauss–Newton from `C = I`, `c = mean(readings)`.
pub fn solve_internal(readings: &[Vec3], reference_magnitude: f64) -> Result<InternalSolution> {
    if readings.len() < MIN_ORIENTATIONS {
        return Err(Error::InsufficientOrientations {
            got: readings.len(),
            need: MIN_ORIENTATIONS,
        });
    }
    if !(reference_magnitude > 0.0) {
        return Err(Error::InvalidArgument("reference magnitude must be positive".into()));
    }
    let mut warnings = Vec::new();
    let spread = max_pairwise_angle_deg(readings);
    if spread < MIN_SPREAD_DEG {
        log::warn!("calibration readings span only {spread:.2}°");
        warnings.push(CalibrationWarning::NarrowSpread { max_pairwise_deg: spread });
    }

    let mean = readings.iter().sum::<Vec3>() / readings.len() as f64;
    let x0 = DVector::from_vec(vec![1.0, 0.0, 0.0, 1.0, 0.0, 1.0, mean.x, mean.y, mean.z]);
    let problem = EllipsoidProblem {
        readings,
        ref2: reference_magnitude * reference_magnitude,
    };
    let report = damped_gauss_newton(&problem, x0, &SolverOptions::default());
    let residual_rms = report.residual_rms(readings.len());
    if !report.converged() || !residual_rms.is_finite() {
        return Err(Error::CalibrationDiverged {
            iterations: report.iterations,
            residual_rms,
        });
    }
    let x = &report.x;
    let calibration = InternalCalibration::new(unpack_symmetric(x), Vec3::new(x[6], x[7], x[8]))?;
    Ok(InternalSolution {
        calibration,
        residual_rms,
        iterations: report.iterations,
        warnings,
    })
}

struct CrossProblem<'a> {
    pairs: &'a [(Vec3, Vec3)],
    sin_delta: f64,
}

impl CrossProblem<'_> {
    fn residual(&self, r_cs: &Rot3, a: &Vec3, b: &Vec3) -> f64 {
        a.dot(&(r_cs.transpose() * *b)) / (a.norm() * b.norm()) - self.sin_delta
    }
}

impl LeastSquaresProblem for CrossProblem<'_> {
    fn residuals(&self, x: &DVector<f64>) -> DVector<f64> {
        let r = exp_so3(&Vec3::new(x[0], x[1], x[2]));
        DVector::from_iterator(self.pairs.len(), self.pairs.iter().map(|(a, b)| self.residual(&r, a, b)))
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        // central differences; three parameters and smooth residuals
        let h = 1e-7;
        let mut j = DMatrix::zeros(self.pairs.len(), 3);
        for k in 0..3 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += h;
            xm[k] -= h;
            let col = (self.residuals(&xp) - self.residuals(&xm)) / (2.0 * h);
            j.set_column(k, &col);
        }
        j
    }
}

/// Singular-value ratio below which the cross fit is reported unobservable.
const OBSERVABILITY_RATIO: f64 = 1e-6;

/// Fits `R_cs` from internally calibrated `(accel, mag)` pairs so that
/// `aᵀ R_csᵀ b = ‖a‖‖b‖ sin δ`, via Levenberg–Marquardt on `R_cs = exp(φ)`.
pub fn solve_cross(pairs: &[(Vec3, Vec3)], inclination_deg: f64) -> Result<CrossSolution> {
    if pairs.len() < MIN_ORIENTATIONS {
        return Err(Error::InsufficientOrientations {
            got: pairs.len(),
            need: MIN_ORIENTATIONS,
        });
    }
    let problem = CrossProblem {
        pairs,
        sin_delta: inclination_deg.to_radians().sin(),
    };
    let report = levenberg_marquardt(&problem, DVector::zeros(3), &SolverOptions::default());
    let residual_rms = report.residual_rms(pairs.len());
    if !report.converged() || !residual_rms.is_finite() {
        return Err(Error::CalibrationDiverged {
            iterations: report.iterations,
            residual_rms,
        });
    }
    let phi = Vec3::new(report.x[0], report.x[1], report.x[2]);

    let mut warnings = Vec::new();
    let sv = problem.jacobian(&report.x).singular_values();
    let ratio = sv.min() / sv.max();
    if !(ratio > OBSERVABILITY_RATIO) {
        log::warn!("cross-misalignment fit is rank deficient (σmin/σmax = {ratio:e})");
        warnings.push(CalibrationWarning::Unobservable { singular_ratio: ratio });
    }
    let accel_dirs: Vec<Vec3> = pairs.iter().map(|p| p.0).collect();
    let spread = max_pairwise_angle_deg(&accel_dirs);
    if spread < MIN_SPREAD_DEG {
        warnings.push(CalibrationWarning::NarrowSpread { max_pairwise_deg: spread });
    }
    // re-wrap so the stored rotation is canonical
    let r_cs = exp_so3(&log_so3(&exp_so3(&phi)));
    Ok(CrossSolution {
        cross: CrossCalibration { r_cs },
        residual_rms,
        iterations: report.iterations,
        warnings,
    })
}

/// Full calibration from per-orientation averaged raw readings: internal fit per
/// sensor, then the cross rotation on the internally corrected pairs. The same
/// orientations serve both steps.
#[derive(Debug, Clone)]
pub struct CalibrationReport {
    pub model: CalibrationModel,
    pub accel: InternalSolution,
    pub mag: InternalSolution,
    pub cross: CrossSolution,
}

pub fn calibrate(accel: &[Vec3], mag: &[Vec3], fields: &FieldSpec) -> Result<CalibrationReport> {
    if accel.len() != mag.len() {
        return Err(Error::MisalignedStreams(accel.len(), mag.len()));
    }
    let accel_sol = solve_internal(accel, fields.g)?;
    let mag_sol = solve_internal(mag, fields.b0)?;
    let pairs: Vec<(Vec3, Vec3)> = accel
        .iter()
        .zip(mag)
        .map(|(a, b)| (accel_sol.calibration.correct(a), mag_sol.calibration.correct(b)))
        .collect();
    let cross_sol = solve_cross(&pairs, 0.0)?;
    Ok(CalibrationReport {
        model: CalibrationModel {
            accel: accel_sol.calibration,
            mag: mag_sol.calibration,
            cross: cross_sol.cross,
        },
        accel: accel_sol,
        mag: mag_sol,
        cross: cross_sol,
    })
}

/// `10·log10(√n)`: SNR gain from averaging `n` independent samples.
pub fn snr_gain_db(n_samples: u64) -> Result<f64> {
    if n_samples < 1 {
        return Err(Error::Domain("sample count must be at least 1".into()));
    }
    Ok(10.0 * (n_samples as f64).sqrt().log10())
}
