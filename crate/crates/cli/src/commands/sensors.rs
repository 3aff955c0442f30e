//! Sensor-log subcommands: misalignment calibration and orientation estimation.

use std::path::PathBuf;

use clap::Args;
use moco_core::calibration::{apply, calibrate, CalibrationModel, CalibrationWarning};
use moco_core::compass::{average_window, decimate, estimate, InitialNormalizer};
use moco_core::geometry::Rot3;
use moco_core::io;
use moco_core::sensor_sim::{FieldSpec, SensorSample};
use moco_core::Vec3;
use serde_json::{json, Value};

use super::plot::orientation_plot;
use super::{positive, require_file, write_text, FieldArgs};
use crate::error::{invalid, CliResult};
use crate::jsonl::{self, num};

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// sensor log CSV (t,ax,ay,az,mx,my,mz) of stationary orientations held for --dwell each
    #[arg(long)]
    pub sensor: PathBuf,
    /// time per orientation, s
    #[arg(long, default_value_t = 0.25)]
    pub dwell: f64,
    /// fraction of each dwell discarded at both ends
    #[arg(long, default_value_t = 0.1)]
    pub trim: f64,
    /// calibration model output
    #[arg(long, default_value = "calib.txt")]
    pub out: PathBuf,
    /// also write the residual report as JSON lines
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub fields: FieldArgs,
}

pub fn read_log(path: &PathBuf) -> CliResult<Vec<SensorSample>> {
    require_file(path)?;
    let samples = io::read_sensor_csv(path)?;
    if let Some(i) = samples.windows(2).position(|w| !(w[1].t > w[0].t)) {
        return Err(moco_core::Error::NonMonotoneTimestamps(i + 1).into());
    }
    Ok(samples)
}

/// Averaged readings of each dwell block, edges trimmed.
pub fn dwell_means(samples: &[SensorSample], dwell: f64, trim: f64) -> Vec<SensorSample> {
    let Some(first) = samples.first() else {
        return Vec::new();
    };
    let mut blocks: Vec<Vec<SensorSample>> = Vec::new();
    for s in samples {
        let pos = (s.t - first.t) / dwell + 1e-6;
        let (block, frac) = (pos.floor() as usize, pos.fract());
        if frac < trim || frac > 1.0 - trim {
            continue;
        }
        if blocks.len() <= block {
            blocks.resize_with(block + 1, Vec::new);
        }
        blocks[block].push(*s);
    }
    blocks.iter().filter(|b| !b.is_empty()).map(|b| average_window(b)).collect()
}

fn magnitude_mse(v: &[Vec3], reference: f64) -> f64 {
    v.iter().map(|x| (x.norm() - reference).powi(2)).sum::<f64>() / v.len().max(1) as f64
}

fn warnings(w: &[CalibrationWarning]) -> Value {
    Value::Array(w.iter().map(|w| Value::String(format!("{w:?}"))).collect())
}

pub fn run_calibrate(args: &CalibrateArgs) -> CliResult<()> {
    positive("dwell", args.dwell)?;
    if !(0.0..0.5).contains(&args.trim) {
        return Err(invalid("--trim must lie in [0, 0.5)"));
    }
    let fields = args.fields.spec()?;
    let poses = dwell_means(&read_log(&args.sensor)?, args.dwell, args.trim);
    let accel: Vec<Vec3> = poses.iter().map(|s| s.accel).collect();
    let mag: Vec<Vec3> = poses.iter().map(|s| s.mag).collect();
    let report = calibrate(&accel, &mag, &fields)?;
    io::write_calibration(&args.out, &report.model)?;

    let corrected: Vec<SensorSample> = poses.iter().map(|s| apply(&report.model, s)).collect();
    let ca: Vec<Vec3> = corrected.iter().map(|s| s.accel).collect();
    let cm: Vec<Vec3> = corrected.iter().map(|s| s.mag).collect();
    let cross = report.model.cross.r_cs.to_axis_angle().map(f64::to_degrees);
    let record = json!({
        "kind": "calibration",
        "orientations": poses.len(),
        "accel_residual_rms": num(report.accel.residual_rms),
        "mag_residual_rms": num(report.mag.residual_rms),
        "cross_residual_rms": num(report.cross.residual_rms),
        "accel_iterations": report.accel.iterations,
        "mag_iterations": report.mag.iterations,
        "cross_iterations": report.cross.iterations,
        "cross_axis_angle_deg": [num(cross.x), num(cross.y), num(cross.z)],
        "accel_magnitude_mse_before": num(magnitude_mse(&accel, fields.g)),
        "accel_magnitude_mse_after": num(magnitude_mse(&ca, fields.g)),
        "mag_magnitude_mse_before": num(magnitude_mse(&mag, fields.b0)),
        "mag_magnitude_mse_after": num(magnitude_mse(&cm, fields.b0)),
        "warnings": {
            "accel": warnings(&report.accel.warnings),
            "mag": warnings(&report.mag.warnings),
            "cross": warnings(&report.cross.warnings),
        },
    });
    if let Some(path) = &args.report {
        jsonl::write(path, std::slice::from_ref(&record))?;
    }
    println!("{record}");
    Ok(())
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// sensor log CSV
    #[arg(long)]
    pub sensor: PathBuf,
    /// calibration model; identity when omitted
    #[arg(long)]
    pub calib: Option<PathBuf>,
    /// raw samples averaged per orientation
    #[arg(long, default_value_t = 10)]
    pub factor: usize,
    /// orientation CSV output (t,rx,ry,rz; axis-angle in degrees)
    #[arg(long, default_value = "orientation.csv")]
    pub out: PathBuf,
    /// optional SVG plot of the orientation trace
    #[arg(long)]
    pub plot: Option<PathBuf>,
    #[command(flatten)]
    pub fields: FieldArgs,
}

pub fn load_model(path: Option<&PathBuf>) -> CliResult<CalibrationModel> {
    match path {
        Some(p) => {
            require_file(p)?;
            Ok(io::read_calibration(p)?)
        }
        None => Ok(CalibrationModel::identity()),
    }
}

/// Calibrate, average `factor` samples, estimate and normalize to the first
/// accepted window. Returns the trace and the number of rejected windows.
pub fn orientation_trace(
    samples: &[SensorSample],
    model: &CalibrationModel,
    fields: &FieldSpec,
    factor: usize,
) -> CliResult<(Vec<(f64, Rot3)>, usize)> {
    let calibrated: Vec<SensorSample> = samples.iter().map(|s| apply(model, s)).collect();
    let windows = decimate(&calibrated, factor)?;
    let mut norm = InitialNormalizer::new();
    let mut rejected = 0;
    let mut out = Vec::with_capacity(windows.len());
    for w in &windows {
        match estimate(w, fields) {
            Ok(r) => out.push((w.t, norm.push(&r))),
            Err(e) => {
                log::debug!("window at t = {}: {e}", w.t);
                rejected += 1;
            }
        }
    }
    Ok((out, rejected))
}

pub fn run_estimate(args: &EstimateArgs) -> CliResult<()> {
    let fields = args.fields.spec()?;
    let model = load_model(args.calib.as_ref())?;
    let samples = read_log(&args.sensor)?;
    let (trace, rejected) = orientation_trace(&samples, &model, &fields, args.factor)?;
    if trace.is_empty() {
        return Err(crate::error::CliError::Runtime("every window was rejected by the plausibility gate".into()));
    }
    io::write_orientation_csv(&args.out, &trace)?;
    if let Some(p) = &args.plot {
        write_text(p, &orientation_plot(&trace))?;
    }
    println!("{}", json!({ "kind": "estimate", "windows": trace.len() + rejected, "emitted": trace.len(), "rejected": rejected }));
    Ok(())
}
