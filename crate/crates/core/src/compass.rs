//! Integration-free orientation from a single accelerometer + magnetometer sample.
//!
//! With gravity `a` and the static field `b` perpendicular, the triad
//! `[((a×b)×a)/‖·‖ | (a×b)/‖·‖ | a/‖a‖]` is the sensor orientation in NED; a
//! fixed permutation takes it to the scanner frame. Also hosts the two
//! integrating baselines (gyro attitude, double-integrated accel) whose drift
//! the compass avoids.

use crate::error::{Error, Result};
use crate::geometry::{exp_so3, ned_to_dcs, ned_to_dcs_permutation, normalize_to_initial, Mat3, Rot3, Vec3};
use crate::sensor_sim::{FieldSpec, GyroSample, SensorSample};

/// Rejects packets whose field magnitudes are far from the reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlausibilityGate {
    /// Minimum `‖accel‖ / g`.
    pub min_accel_ratio: f64,
    /// Minimum `‖mag‖ / B0`.
    pub min_mag_ratio: f64,
}

impl Default for PlausibilityGate {
    fn default() -> Self {
        Self {
            min_accel_ratio: 0.5,
            min_mag_ratio: 0.5,
        }
    }
}

/// One orientation sample in both absolute (scanner) and relative form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientationEstimate {
    pub t: f64,
    pub r_dcs: Rot3,
    pub r_relative: Rot3,
}

/// Orientation in NED from one sample, unit-normalised per column.
pub fn estimate_ned(sample: &SensorSample, fields: &FieldSpec, gate: &PlausibilityGate) -> Result<Rot3> {
    let a = sample.accel;
    let b = sample.mag;
    let (an, bn) = (a.norm(), b.norm());
    if !(an > gate.min_accel_ratio * fields.g && bn > gate.min_mag_ratio * fields.b0) {
        return Err(Error::ImplausibleFields {
            accel_norm: an,
            mag_norm: bn,
        });
    }
    let axb = a.cross(&b);
    let axb_norm = axb.norm();
    // scale-free version of ‖a×b‖ < 1e-6·g·B0
    if axb_norm < 1e-6 * an * bn {
        return Err(Error::ParallelFields);
    }
    let c2 = axb / axb_norm;
    let c3 = a / an;
    let north = axb.cross(&a);
    let c1 = north / north.norm();
    Ok(Rot3::from_matrix_unchecked(Mat3::from_columns(&[c1, c2, c3])))
}

/// Orientation in the scanner frame from one sample with the default gate.
pub fn estimate(sample: &SensorSample, fields: &FieldSpec) -> Result<Rot3> {
    estimate_with_gate(sample, fields, &PlausibilityGate::default())
}

pub fn estimate_with_gate(sample: &SensorSample, fields: &FieldSpec, gate: &PlausibilityGate) -> Result<Rot3> {
    Ok(ned_to_dcs(&estimate_ned(sample, fields, gate)?))
}

/// Sensor orientation (`a_m = R·g`) that makes the normalized compass output equal
/// `head`, a rotation in the scanner frame, when the reference pose is the identity:
/// `R = P·headᵀ·Pᵀ`.
pub fn sensor_rotation_for_head(head: &Rot3) -> Rot3 {
    let p = ned_to_dcs_permutation();
    p * head.transpose() * p.transpose()
}

/// Scanner-frame head rotation that the normalized compass reports for sensor
/// orientations `r0` (reference) and `rt`: `Pᵀ·Rtᵀ·R0·P`.
pub fn head_rotation_from_sensor(r0: &Rot3, rt: &Rot3) -> Rot3 {
    let p = ned_to_dcs_permutation();
    p.transpose() * rt.transpose() * *r0 * p
}

/// Incremental form of [`normalize_stream`]; the first pushed rotation becomes the reference.
#[derive(Debug, Clone, Default)]
pub struct InitialNormalizer {
    reference: Option<Rot3>,
}

impl InitialNormalizer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, r: &Rot3) -> Rot3 {
        match &self.reference {
            None => {
                self.reference = Some(*r);
                Rot3::identity()
            }
            Some(r0) => normalize_to_initial(r0, r),
        }
    }

    /// Forget the reference; the next rotation re-zeroes the stream.
    pub fn reset(&mut self) {
        self.reference = None;
    }

    pub fn reference(&self) -> Option<&Rot3> {
        self.reference.as_ref()
    }
}

/// `out[0] = I`, `out[k] = (R₀ᵀ·R_k)ᵀ`.
pub fn normalize_stream(estimates: &[Rot3]) -> Result<Vec<Rot3>> {
    if estimates.is_empty() {
        return Err(Error::Empty("orientation stream"));
    }
    let mut norm = InitialNormalizer::new();
    Ok(estimates.iter().map(|r| norm.push(r)).collect())
}

/// Mean of a window of samples: accel, mag and timestamp averaged in order.
pub fn average_window(window: &[SensorSample]) -> SensorSample {
    let n = window.len() as f64;
    let mut t = 0.0;
    let mut accel = Vec3::zeros();
    let mut mag = Vec3::zeros();
    for s in window {
        t += s.t;
        accel += s.accel;
        mag += s.mag;
    }
    SensorSample {
        t: t / n,
        accel: accel / n,
        mag: mag / n,
    }
}

/// Averages consecutive windows of `factor` raw samples; a trailing partial window is dropped.
pub fn decimate(samples: &[SensorSample], factor: usize) -> Result<Vec<SensorSample>> {
    if factor < 1 {
        return Err(Error::InvalidArgument("decimation factor must be at least 1".into()));
    }
    if samples.len() < factor {
        return Err(Error::ShortStream {
            len: samples.len(),
            factor,
        });
    }
    Ok(samples.chunks_exact(factor).map(average_window).collect())
}

/// Batch pipeline: estimate each sample, then normalise to the first.
pub fn estimate_stream(samples: &[SensorSample], fields: &FieldSpec) -> Result<Vec<OrientationEstimate>> {
    let mut norm = InitialNormalizer::new();
    samples
        .iter()
        .map(|s| {
            let r_dcs = estimate(s, fields)?;
            Ok(OrientationEstimate {
                t: s.t,
                r_dcs,
                r_relative: norm.push(&r_dcs),
            })
        })
        .collect()
}

/// Recursive attitude from body rates: `R_{i+1} = R_i·exp([ω_i]^∧ Δt_i)`.
pub fn integrate_gyro(samples: &[GyroSample], r0: &Rot3) -> Result<Vec<Rot3>> {
    if samples.is_empty() {
        return Err(Error::Empty("gyro stream"));
    }
    let mut out = Vec::with_capacity(samples.len());
    let mut r = *r0;
    out.push(r);
    for (i, w) in samples.windows(2).enumerate() {
        let dt = w[1].t - w[0].t;
        if dt < 0.0 || !dt.is_finite() {
            return Err(Error::NonMonotoneTimestamps(i + 1));
        }
        r = r * exp_so3(&(w[0].omega * dt));
        out.push(r);
    }
    Ok(out)
}

/// Dead-reckoning position (m) from accelerometer samples with gravity removed
/// using the supplied orientations; trapezoidal integration from rest.
pub fn double_integrate_accel(samples: &[SensorSample], r_true: &[Rot3], fields: &FieldSpec) -> Result<Vec<Vec3>> {
    if samples.len() != r_true.len() {
        return Err(Error::MisalignedStreams(samples.len(), r_true.len()));
    }
    if samples.is_empty() {
        return Ok(Vec::new());
    }
    let g = fields.gravity();
    let kin: Vec<Vec3> = samples.iter().zip(r_true).map(|(s, r)| s.accel - r * &g).collect();
    let mut pos = Vec::with_capacity(samples.len());
    let mut p = Vec3::zeros();
    let mut v = Vec3::zeros();
    pos.push(p);
    for i in 1..samples.len() {
        let dt = samples[i].t - samples[i - 1].t;
        if dt < 0.0 {
            return Err(Error::NonMonotoneTimestamps(i));
        }
        let v_next = v + (kin[i - 1] + kin[i]) * (0.5 * dt);
        p += (v + v_next) * (0.5 * dt);
        v = v_next;
        pos.push(p);
    }
    Ok(pos)
}
