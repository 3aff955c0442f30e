//! Forward models for synthetic accelerometer, magnetometer and gyroscope streams.
//!
//! Fields are expressed in the NED frame: gravity `[0, 0, g]` and the static
//! field `[B0, 0, 0]`. A sensor at orientation `R` reads `R·g` and `R·b`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::calibration::CalibrationModel;
use crate::error::{Error, Result};
use crate::geometry::{geodesic_interpolate, log_so3, RigidMotion, Rot3, Vec3};

/// Reference field magnitudes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSpec {
    /// Gravitational acceleration, m/s².
    pub g: f64,
    /// Static magnetic field, T.
    pub b0: f64,
}

impl Default for FieldSpec {
    fn default() -> Self {
        Self { g: 9.81, b0: 3.0 }
    }
}

impl FieldSpec {
    pub fn new(g: f64, b0: f64) -> Result<Self> {
        if !(g > 0.0 && b0 > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "field magnitudes must be positive (g = {g}, B0 = {b0})"
            )));
        }
        Ok(Self { g, b0 })
    }

    pub fn gravity(&self) -> Vec3 {
        Vec3::new(0.0, 0.0, self.g)
    }

    pub fn static_field(&self) -> Vec3 {
        Vec3::new(self.b0, 0.0, 0.0)
    }
}

/// One accelerometer + magnetometer reading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorSample {
    pub t: f64,
    /// m/s²
    pub accel: Vec3,
    /// T
    pub mag: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GyroSample {
    pub t: f64,
    /// rad/s, body frame
    pub omega: Vec3,
}

/// Per-channel white-noise levels and the generator seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub sigma_accel: f64,
    pub sigma_mag: f64,
    pub sigma_gyro: f64,
    pub rng_seed: u64,
}

/// Synthetic gyro noise level; the measured sensor figures cover accel and mag only.
pub const DEFAULT_SIGMA_GYRO: f64 = 0.01;

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            sigma_accel: 0.05,
            sigma_mag: 0.0012,
            sigma_gyro: DEFAULT_SIGMA_GYRO,
            rng_seed: 0,
        }
    }
}

impl NoiseSpec {
    pub fn noiseless() -> Self {
        Self {
            sigma_accel: 0.0,
            sigma_mag: 0.0,
            sigma_gyro: 0.0,
            rng_seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigma_accel < 0.0 || self.sigma_mag < 0.0 || self.sigma_gyro < 0.0 {
            return Err(Error::InvalidArgument("noise sigmas must be non-negative".into()));
        }
        Ok(())
    }
}

/// Seeded Gaussian source. ChaCha8 + ziggurat normals; fixed for reproducibility.
#[derive(Debug, Clone)]
pub struct NoiseSource {
    spec: NoiseSpec,
    rng: ChaCha8Rng,
}

impl NoiseSource {
    pub fn new(spec: &NoiseSpec) -> Self {
        Self {
            spec: *spec,
            rng: ChaCha8Rng::seed_from_u64(spec.rng_seed),
        }
    }

    pub fn spec(&self) -> &NoiseSpec {
        &self.spec
    }

    fn vec(&mut self, sigma: f64) -> Vec3 {
        if sigma == 0.0 {
            return Vec3::zeros();
        }
        let mut draw = || -> f64 { StandardNormal.sample(&mut self.rng) };
        Vec3::new(draw() * sigma, draw() * sigma, draw() * sigma)
    }

    pub fn accel(&mut self) -> Vec3 {
        self.vec(self.spec.sigma_accel)
    }

    pub fn mag(&mut self) -> Vec3 {
        self.vec(self.spec.sigma_mag)
    }

    pub fn gyro(&mut self) -> Vec3 {
        self.vec(self.spec.sigma_gyro)
    }
}

/// Stationary reading at orientation `r`: `accel = R·[0,0,g] + n_a`, `mag = R·[B0,0,0] + n_b`.
pub fn measure_stationary(r: &Rot3, fields: &FieldSpec, noise: &mut NoiseSource) -> SensorSample {
    let accel = r * &fields.gravity() + noise.accel();
    let mag = r * &fields.static_field() + noise.mag();
    SensorSample { t: 0.0, accel, mag }
}

/// Applies the raw-sensor model a calibration must undo:
/// `accel ← C_a·accel + c_a`, `mag ← C_b·R_cs·mag + c_b`.
pub fn corrupt_with_misalignment(sample: &SensorSample, model: &CalibrationModel) -> SensorSample {
    let accel = model.accel.matrix() * sample.accel + model.accel.bias();
    let mag = model.mag.matrix() * (&model.cross.r_cs * &sample.mag) + model.mag.bias();
    SensorSample {
        t: sample.t,
        accel,
        mag,
    }
}

/// One pose of a planted trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    pub t: f64,
    pub pose: RigidMotion,
    /// Kinematic acceleration in the sensor frame, held until the next entry.
    pub kinematic_accel: Vec3,
}

/// Time-ordered planted poses. Rotations follow the sensor convention (`a_m = R·g`).
#[derive(Debug, Clone, PartialEq)]
pub struct MotionTrace {
    pub sample_rate: f64,
    entries: Vec<TraceEntry>,
}

impl MotionTrace {
    pub fn new(sample_rate: f64, entries: Vec<TraceEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyTrajectory);
        }
        for (i, w) in entries.windows(2).enumerate() {
            if !(w[1].t > w[0].t) {
                return Err(Error::NonMonotoneTimestamps(i + 1));
            }
        }
        Ok(Self {
            sample_rate,
            entries,
        })
    }

    /// Trace from `(t, pose)` pairs with no kinematic acceleration.
    pub fn from_poses(sample_rate: f64, poses: impl IntoIterator<Item = (f64, RigidMotion)>) -> Result<Self> {
        let entries = poses
            .into_iter()
            .map(|(t, pose)| TraceEntry {
                t,
                pose,
                kinematic_accel: Vec3::zeros(),
            })
            .collect();
        Self::new(sample_rate, entries)
    }

    /// Constant pose over `[0, duration]`.
    pub fn constant(pose: RigidMotion, duration: f64) -> Result<Self> {
        Self::from_poses(0.0, [(0.0, pose), (duration, pose)])
    }

    pub fn entries(&self) -> &[TraceEntry] {
        &self.entries
    }

    pub fn start(&self) -> f64 {
        self.entries[0].t
    }

    pub fn end(&self) -> f64 {
        self.entries[self.entries.len() - 1].t
    }

    pub fn duration(&self) -> f64 {
        self.end() - self.start()
    }

    fn segment(&self, t: f64) -> usize {
        // index i with entries[i].t <= t < entries[i+1].t, clamped
        match self
            .entries
            .binary_search_by(|e| e.t.partial_cmp(&t).unwrap_or(std::cmp::Ordering::Less))
        {
            Ok(i) => i.min(self.entries.len() - 1),
            Err(0) => 0,
            Err(i) => i - 1,
        }
    }

    /// Pose at time `t`: geodesic rotation, linear translation, clamped at the ends.
    pub fn pose_at(&self, t: f64) -> RigidMotion {
        let i = self.segment(t);
        let a = &self.entries[i];
        if i + 1 >= self.entries.len() || t <= a.t {
            return a.pose;
        }
        let b = &self.entries[i + 1];
        let s = ((t - a.t) / (b.t - a.t)).clamp(0.0, 1.0);
        RigidMotion {
            rotation: geodesic_interpolate(&a.pose.rotation, &b.pose.rotation, s),
            translation: a.pose.translation * (1.0 - s) + b.pose.translation * s,
        }
    }

    /// Kinematic acceleration at `t` (zero-order hold).
    pub fn kinematic_accel_at(&self, t: f64) -> Vec3 {
        if t < self.start() || t > self.end() {
            return Vec3::zeros();
        }
        self.entries[self.segment(t)].kinematic_accel
    }

    /// Sample times on a uniform grid at `rate` covering the trace.
    pub fn sample_times(&self, rate: f64) -> impl Iterator<Item = f64> + '_ {
        let n = (self.duration() * rate + 1e-9).floor() as usize + 1;
        let t0 = self.start();
        (0..n).map(move |i| t0 + i as f64 / rate)
    }
}

/// Iterator over synthetic accel + mag samples along a trace.
pub struct TrajectorySampler<'a> {
    trace: &'a MotionTrace,
    fields: FieldSpec,
    noise: NoiseSource,
    rate: f64,
    index: usize,
    count: usize,
}

impl Iterator for TrajectorySampler<'_> {
    type Item = SensorSample;

    fn next(&mut self) -> Option<SensorSample> {
        if self.index >= self.count {
            return None;
        }
        let t = self.trace.start() + self.index as f64 / self.rate;
        self.index += 1;
        let pose = self.trace.pose_at(t);
        let mut s = measure_stationary(&pose.rotation, &self.fields, &mut self.noise);
        s.accel += self.trace.kinematic_accel_at(t);
        s.t = t;
        Some(s)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = self.count - self.index;
        (n, Some(n))
    }
}

/// Streams `accel = R(t)·g + a_r(t) + n`, `mag = R(t)·b + n` at `rate` Hz.
pub fn simulate_trajectory<'a>(
    trace: &'a MotionTrace,
    fields: &FieldSpec,
    noise: &NoiseSpec,
    rate: f64,
) -> Result<TrajectorySampler<'a>> {
    if !(rate > 0.0) {
        return Err(Error::InvalidArgument(format!("sample rate must be positive, got {rate}")));
    }
    noise.validate()?;
    let count = trace.sample_times(rate).count();
    Ok(TrajectorySampler {
        trace,
        fields: *fields,
        noise: NoiseSource::new(noise),
        rate,
        index: 0,
        count,
    })
}

/// Body-rate samples consistent with the trace: `ω_i = log(R_iᵀ R_{i+1}) / Δt` plus noise.
/// The final sample repeats the last forward difference.
pub fn simulate_gyro(trace: &MotionTrace, noise: &NoiseSpec, rate: f64) -> Result<Vec<GyroSample>> {
    if !(rate > 0.0) {
        return Err(Error::InvalidArgument(format!("sample rate must be positive, got {rate}")));
    }
    noise.validate()?;
    let mut source = NoiseSource::new(noise);
    let times: Vec<f64> = trace.sample_times(rate).collect();
    let rotations: Vec<Rot3> = times.iter().map(|&t| trace.pose_at(t).rotation).collect();
    let mut out = Vec::with_capacity(times.len());
    let mut last = Vec3::zeros();
    for i in 0..times.len() {
        if i + 1 < times.len() {
            let dt = times[i + 1] - times[i];
            last = log_so3(&(rotations[i].transpose() * rotations[i + 1])) / dt;
        }
        out.push(GyroSample {
            t: times[i],
            omega: last + source.gyro(),
        });
    }
    Ok(out)
}
