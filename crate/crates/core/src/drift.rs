//! Drift experiment: gyro integration against the integration-free compass.
//!
//! Both estimators see the same slow nodding motion. Gyro white noise integrates
//! into an angular random walk whose mean error grows like `√t`; the compass error
//! is set by the per-sample field noise and stays flat.

use rayon::prelude::*;

use crate::compass::{estimate_ned, integrate_gyro, PlausibilityGate};
use crate::error::{Error, Result};
use crate::geometry::{deg, exp_so3, rad, RigidMotion, Vec3};
use crate::sensor_sim::{simulate_gyro, simulate_trajectory, FieldSpec, MotionTrace, NoiseSpec};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftConfig {
    pub duration: f64,
    pub rate: f64,
    pub noise: NoiseSpec,
    pub fields: FieldSpec,
    /// nod amplitude about x, degrees
    pub nod_deg: f64,
    pub nod_hz: f64,
}

impl Default for DriftConfig {
    fn default() -> Self {
        Self {
            duration: 300.0,
            rate: 200.0,
            noise: NoiseSpec::default(),
            fields: FieldSpec::default(),
            nod_deg: 3.0,
            nod_hz: 0.05,
        }
    }
}

/// Seed-averaged error series, degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftSeries {
    pub t: Vec<f64>,
    pub gyro_deg: Vec<f64>,
    pub compass_deg: Vec<f64>,
    pub seeds: usize,
}

impl DriftSeries {
    /// Power-law exponent of the gyro error over `t ≥ t_min`.
    pub fn gyro_exponent(&self, t_min: f64) -> Result<f64> {
        Ok(fit_power_law(&self.t, &self.gyro_deg, t_min)?.0)
    }

    pub fn compass_max(&self) -> f64 {
        self.compass_deg.iter().cloned().fold(0.0, f64::max)
    }
}

/// The nodding trace used by the experiment, sampled every 0.1 s.
pub fn nod_trace(cfg: &DriftConfig) -> Result<MotionTrace> {
    let steps = (cfg.duration * 10.0).round() as usize;
    let poses = (0..=steps).map(|i| {
        let t = i as f64 * 0.1;
        let angle = rad(cfg.nod_deg) * (2.0 * std::f64::consts::PI * cfg.nod_hz * t).sin();
        (t, RigidMotion::new(exp_so3(&Vec3::new(angle, 0.0, 0.0)), Vec3::zeros()))
    });
    MotionTrace::from_poses(cfg.rate, poses)
}

/// Per-sample errors for one seed: `(gyro, compass)` angles in degrees against truth.
pub fn drift_errors(cfg: &DriftConfig, trace: &MotionTrace, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    let noise = cfg.noise.with_seed(seed);
    // independent stream for the gyro
    let gyro_noise = cfg.noise.with_seed(seed ^ 0x9e37_79b9_7f4a_7c15);
    let samples: Vec<_> = simulate_trajectory(trace, &cfg.fields, &noise, cfg.rate)?.collect();
    let gyro = simulate_gyro(trace, &gyro_noise, cfg.rate)?;
    let truth: Vec<_> = samples.iter().map(|s| trace.pose_at(s.t).rotation).collect();
    let integrated = integrate_gyro(&gyro, &truth[0])?;
    let gate = PlausibilityGate::default();
    let mut gyro_err = Vec::with_capacity(samples.len());
    let mut compass_err = Vec::with_capacity(samples.len());
    for ((s, r), g) in samples.iter().zip(&truth).zip(&integrated) {
        gyro_err.push(deg(g.angle_to(r)));
        compass_err.push(deg(estimate_ned(s, &cfg.fields, &gate)?.angle_to(r)));
    }
    Ok((gyro_err, compass_err))
}

/// Runs seeds `0..seeds` in parallel and averages the error series.
pub fn run_drift(cfg: &DriftConfig, seeds: usize) -> Result<DriftSeries> {
    if seeds == 0 {
        return Err(Error::InvalidArgument("drift experiment needs at least one seed".into()));
    }
    let trace = nod_trace(cfg)?;
    let runs: Vec<(Vec<f64>, Vec<f64>)> = (0..seeds as u64)
        .into_par_iter()
        .map(|seed| drift_errors(cfg, &trace, seed))
        .collect::<Result<_>>()?;
    let n = runs[0].0.len();
    let mut gyro_deg = vec![0.0; n];
    let mut compass_deg = vec![0.0; n];
    // fixed seed order keeps the sums schedule-independent
    for (g, c) in &runs {
        for i in 0..n {
            gyro_deg[i] += g[i];
            compass_deg[i] += c[i];
        }
    }
    let scale = 1.0 / seeds as f64;
    gyro_deg.iter_mut().chain(compass_deg.iter_mut()).for_each(|v| *v *= scale);
    let t = (0..n).map(|i| i as f64 / cfg.rate).collect();
    Ok(DriftSeries { t, gyro_deg, compass_deg, seeds })
}

/// Least-squares fit of `log y = p·log t + log c` over `t ≥ t_min`, on 64
/// log-spaced points so late times do not dominate. Returns `(p, c)`.
pub fn fit_power_law(t: &[f64], y: &[f64], t_min: f64) -> Result<(f64, f64)> {
    let pts: Vec<(f64, f64)> = t
        .iter()
        .zip(y)
        .filter(|(t, y)| **t >= t_min && **t > 0.0 && **y > 0.0)
        .map(|(t, y)| (t.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::InvalidArgument("power-law fit needs two positive points".into()));
    }
    let (lo, hi) = (pts[0].0, pts[pts.len() - 1].0);
    let picked: Vec<(f64, f64)> = if hi > lo {
        let mut out = Vec::with_capacity(64);
        let mut j = 0;
        for q in 0..64 {
            let target = lo + (hi - lo) * q as f64 / 63.0;
            while j + 1 < pts.len() && pts[j + 1].0 <= target {
                j += 1;
            }
            out.push(pts[j]);
        }
        out
    } else {
        pts
    };
    let n = picked.len() as f64;
    let mx = picked.iter().map(|p| p.0).sum::<f64>() / n;
    let my = picked.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = picked.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("power-law fit needs distinct times".into()));
    }
    let sxy: f64 = picked.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let p = sxy / sxx;
    Ok((p, (my - p * mx).exp()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_law_recovers_exponent() {
        let t: Vec<f64> = (1..=1000).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = t.iter().map(|t| 2.0 * t.powf(0.37)).collect();
        let (p, c) = fit_power_law(&t, &y, 0.0).unwrap();
        assert!((p - 0.37).abs() < 1e-12 && (c - 2.0).abs() < 1e-10);
    }

    #[test]
    fn power_law_rejects_degenerate() {
        assert!(fit_power_law(&[1.0], &[1.0], 0.0).is_err());
        assert!(fit_power_law(&[1.0, 1.0], &[1.0, 2.0], 0.0).is_err());
    }

    #[test]
    fn noiseless_drift_is_zero() {
        let cfg = DriftConfig { duration: 5.0, noise: NoiseSpec::noiseless(), ..Default::default() };
        let s = run_drift(&cfg, 2).unwrap();
        assert!(s.compass_max() < 1e-6);
        assert!(s.gyro_deg.iter().all(|e| *e < 1e-6));
    }

    #[test]
    fn short_run_shapes() {
        let cfg = DriftConfig { duration: 20.0, ..Default::default() };
        let s = run_drift(&cfg, 4).unwrap();
        assert_eq!(s.t.len(), s.gyro_deg.len());
        assert_eq!(s.t.len(), 4001);
        // gyro starts from the true pose
        assert_eq!(s.gyro_deg[0], 0.0);
        assert!(s.gyro_deg[4000] > s.gyro_deg[200]);
    }
}
