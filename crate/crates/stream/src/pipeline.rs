//! Per-session processing: calibrate, window, average, estimate, normalize.
//!
//! [`Processor`] is the streaming form used by the server. [`offline_orientations`]
//! runs the same chain through the batch functions of the core crate; the two
//! must agree bit for bit on identical input.

use moco_core::calibration::{apply, CalibrationModel};
use moco_core::compass::{average_window, decimate, estimate, InitialNormalizer};
use moco_core::geometry::Rot3;
use moco_core::sensor_sim::{FieldSpec, SensorSample};
use moco_core::{Error, Result};

/// Axis-angle of a normalized orientation at wire precision.
pub fn wire_axis_angle(r: &Rot3) -> [f32; 3] {
    let v = r.to_axis_angle();
    [v.x as f32, v.y as f32, v.z as f32]
}

/// Outcome of pushing one raw sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Step {
    /// window not yet full
    Pending,
    /// window closed; normalized orientation
    Emit(Rot3),
    /// window closed but the compass rejected the averaged fields
    Rejected,
}

#[derive(Debug, Clone)]
pub struct Processor {
    model: CalibrationModel,
    fields: FieldSpec,
    factor: usize,
    window: Vec<SensorSample>,
    normalizer: InitialNormalizer,
}

impl Processor {
    pub fn new(model: CalibrationModel, fields: FieldSpec, factor: usize) -> Result<Self> {
        if factor < 1 {
            return Err(Error::InvalidArgument("decimation factor must be at least 1".into()));
        }
        Ok(Self { model, fields, factor, window: Vec::with_capacity(factor), normalizer: InitialNormalizer::new() })
    }

    pub fn factor(&self) -> usize {
        self.factor
    }

    pub fn push(&mut self, raw: &SensorSample) -> Step {
        self.window.push(apply(&self.model, raw));
        if self.window.len() < self.factor {
            return Step::Pending;
        }
        let averaged = average_window(&self.window);
        self.window.clear();
        match estimate(&averaged, &self.fields) {
            Ok(r) => Step::Emit(self.normalizer.push(&r)),
            Err(_) => Step::Rejected,
        }
    }

    /// The next accepted window defines the new reference.
    pub fn rezero(&mut self) {
        self.normalizer.reset();
    }
}

/// Batch pipeline over a whole log. Windows the compass rejects are skipped,
/// as the server skips them. A trailing partial window is dropped.
pub fn offline_orientations(
    samples: &[SensorSample],
    model: &CalibrationModel,
    fields: &FieldSpec,
    factor: usize,
) -> Result<Vec<Rot3>> {
    let calibrated: Vec<SensorSample> = samples.iter().map(|s| apply(model, s)).collect();
    let decimated = decimate(&calibrated, factor)?;
    let mut norm = InitialNormalizer::new();
    Ok(decimated.iter().filter_map(|s| estimate(s, fields).ok()).map(|r| norm.push(&r)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use moco_core::geometry::{exp_so3, Vec3};
    use moco_core::sensor_sim::{measure_stationary, NoiseSource, NoiseSpec};

    fn stream(n: usize, seed: u64) -> Vec<SensorSample> {
        let fields = FieldSpec::default();
        let mut noise = NoiseSource::new(&NoiseSpec::default().with_seed(seed));
        (0..n)
            .map(|i| {
                let r = exp_so3(&Vec3::new(0.001 * i as f64, 0.2, -0.1));
                let mut s = measure_stationary(&r, &fields, &mut noise);
                s.t = i as f64 * 5e-4;
                s
            })
            .collect()
    }

    #[test]
    fn streaming_matches_batch() {
        let samples = stream(1003, 1);
        let fields = FieldSpec::default();
        let mut p = Processor::new(CalibrationModel::identity(), fields, 10).unwrap();
        let online: Vec<Rot3> = samples
            .iter()
            .filter_map(|s| match p.push(s) {
                Step::Emit(r) => Some(r),
                _ => None,
            })
            .collect();
        let offline = offline_orientations(&samples, &CalibrationModel::identity(), &fields, 10).unwrap();
        assert_eq!(online.len(), 100);
        assert_eq!(online, offline);
    }

    #[test]
    fn first_window_is_identity_and_rezero_resets() {
        let samples = stream(40, 2);
        let mut p = Processor::new(CalibrationModel::identity(), FieldSpec::default(), 10).unwrap();
        let mut out = Vec::new();
        for (i, s) in samples.iter().enumerate() {
            if i == 20 {
                p.rezero();
            }
            if let Step::Emit(r) = p.push(s) {
                out.push(r);
            }
        }
        assert_eq!(out[0], Rot3::identity());
        assert_ne!(out[1], Rot3::identity());
        assert_eq!(out[2], Rot3::identity());
    }

    #[test]
    fn rejects_implausible_window() {
        let mut p = Processor::new(CalibrationModel::identity(), FieldSpec::default(), 2).unwrap();
        let zero = SensorSample { t: 0.0, accel: Vec3::zeros(), mag: Vec3::zeros() };
        assert_eq!(p.push(&zero), Step::Pending);
        assert_eq!(p.push(&zero), Step::Rejected);
        assert!(Processor::new(CalibrationModel::identity(), FieldSpec::default(), 0).is_err());
    }
}
