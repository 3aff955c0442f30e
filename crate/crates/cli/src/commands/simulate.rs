//! Synthetic experiment: phantom, planted per-shot motion, radial shots, the
//! matching sensor log, calibration poses and a displaced slice stack.

use std::path::{Path, PathBuf};

use clap::Args;
use moco_core::calibration::{CalibrationModel, CrossCalibration, InternalCalibration};
use moco_core::compass::sensor_rotation_for_head;
use moco_core::geometry::{exp_so3, Mat3, RigidMotion, Rot3};
use moco_core::io;
use moco_core::kspace::{
    acquire_with_motion, make_trajectory, random_shot_motions, reconstruct, AcquisitionSpec, EllipsoidPhantom,
};
use moco_core::phase_correlation::{apply_phase_shift_2d, structured_phantom_3d, SliceLocalizer, SliceToVolumeOptions, Volume3D};
use moco_core::sensor_sim::{corrupt_with_misalignment, measure_stationary, simulate_trajectory, FieldSpec, MotionTrace, NoiseSource, NoiseSpec, SensorSample};
use moco_core::Vec3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::{ensure_dir, positive, require_file, FieldArgs};
use crate::error::{invalid, CliResult};
use crate::jsonl;

/// Fraction of each shot spent moving to the shot's pose.
const TRANSITION: f64 = 0.1;

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// seed for motion, sensor noise, calibration poses and slice displacements
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// output directory
    #[arg(long, default_value = "sim")]
    pub out: PathBuf,
    /// reconstruction matrix per axis
    #[arg(long, default_value_t = 32)]
    pub matrix: usize,
    /// field of view per axis, mm
    #[arg(long, default_value_t = 96.0)]
    pub fov: f64,
    #[arg(long, default_value_t = 8)]
    pub shots: usize,
    #[arg(long, default_value_t = 100)]
    pub spokes_per_shot: usize,
    /// largest planted rotation, degrees
    #[arg(long, default_value_t = 15.0)]
    pub max_rot: f64,
    /// largest planted translation per axis, mm
    #[arg(long, default_value_t = 10.0)]
    pub max_trans: f64,
    /// per-shot motion CSV to plant instead of random motion (shot 0 must be the identity)
    #[arg(long)]
    pub motion: Option<PathBuf>,
    /// shot duration, s
    #[arg(long, default_value_t = 0.5)]
    pub shot_duration: f64,
    /// sensor sample rate, Hz
    #[arg(long, default_value_t = 2000.0)]
    pub rate: f64,
    /// disable sensor noise
    #[arg(long)]
    pub noiseless: bool,
    /// plant a random sensor misalignment in both sensor logs
    #[arg(long)]
    pub misalign: bool,
    /// stationary orientations in the calibration log
    #[arg(long, default_value_t = 24)]
    pub calib_poses: usize,
    /// dwell per calibration orientation, s
    #[arg(long, default_value_t = 0.25)]
    pub calib_dwell: f64,
    /// slice reference volume size nx,ny,nz
    #[arg(long, value_delimiter = ',', default_value = "64,64,32")]
    pub slice_dims: Vec<usize>,
    /// largest in-plane slice displacement, px
    #[arg(long, default_value_t = 3.0)]
    pub max_slice_shift: f64,
    #[command(flatten)]
    pub fields: FieldArgs,
}

fn unit(rng: &mut ChaCha8Rng) -> Vec3 {
    Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalize()
}

fn random_rotation(rng: &mut ChaCha8Rng) -> Rot3 {
    exp_so3(&(unit(rng) * rng.random_range(0.0..std::f64::consts::PI)))
}

/// Symmetric matrix with eigenvalues in [0.95, 1.05].
fn random_symmetric(rng: &mut ChaCha8Rng) -> Mat3 {
    let q = random_rotation(rng).into_matrix();
    let d = Mat3::from_diagonal(&Vec3::new(rng.random_range(0.95..1.05), rng.random_range(0.95..1.05), rng.random_range(0.95..1.05)));
    let m = q * d * q.transpose();
    (m + m.transpose()) * 0.5
}

fn planted_model(rng: &mut ChaCha8Rng, fields: &FieldSpec) -> CliResult<CalibrationModel> {
    Ok(CalibrationModel {
        accel: InternalCalibration::new(random_symmetric(rng), unit(rng) * rng.random_range(0.0..0.05) * fields.g)?,
        mag: InternalCalibration::new(random_symmetric(rng), unit(rng) * rng.random_range(0.0..0.05) * fields.b0)?,
        cross: CrossCalibration::from_axis_angle(&(unit(rng) * rng.random_range(0.0..0.5f64).to_radians())),
    })
}

/// Head poses in the sensor convention: shot `i` holds its pose over
/// `[(i + TRANSITION)·d, (i + 1)·d]`, reached by a geodesic ramp.
pub fn shot_trace(motions: &[RigidMotion], shot_duration: f64, rate: f64) -> CliResult<MotionTrace> {
    let mut poses = Vec::with_capacity(2 * motions.len());
    for (i, m) in motions.iter().enumerate() {
        let start = i as f64 * shot_duration;
        let settle = if i == 0 { start } else { start + TRANSITION * shot_duration };
        let pose = RigidMotion::new(sensor_rotation_for_head(&m.rotation), m.translation);
        poses.push((settle, pose));
        poses.push((start + shot_duration, pose));
    }
    Ok(MotionTrace::from_poses(rate, poses)?)
}

fn slice_dataset(args: &SimulateArgs, rng: &mut ChaCha8Rng) -> CliResult<(Volume3D, Volume3D, Vec<Vec<f64>>)> {
    let [nx, ny, nz] = match args.slice_dims[..] {
        [a, b, c] => [a, b, c],
        _ => return Err(invalid("--slice-dims takes three values")),
    };
    let reference = structured_phantom_3d([nx, ny, nz], [1.0, 1.0, 2.0], 60, args.seed);
    let loc = SliceLocalizer::new(&reference, SliceToVolumeOptions::default())?;
    let (z_lo, z_hi) = (reference.z_grid[1], reference.z_grid[nz - 2]);
    let mut voxels = Vec::with_capacity(nx * ny * nz);
    let mut truth = Vec::with_capacity(nz);
    for k in 0..nz {
        let z = rng.random_range(z_lo..z_hi);
        let dx = rng.random_range(-args.max_slice_shift..=args.max_slice_shift);
        let dy = rng.random_range(-args.max_slice_shift..=args.max_slice_shift);
        voxels.extend(apply_phase_shift_2d(&loc.resample(z), dx, dy).pixels);
        truth.push(vec![k as f64, dx, dy, z]);
    }
    let stack = Volume3D::new(nx, ny, nz, voxels, reference.spacing, reference.z_grid.clone())?;
    Ok((reference, stack, truth))
}

pub const SLICE_TRUTH_HEADER: [&str; 4] = ["slice", "dx", "dy", "z"];

pub fn run(args: &SimulateArgs) -> CliResult<()> {
    positive("fov", args.fov)?;
    positive("shot-duration", args.shot_duration)?;
    positive("rate", args.rate)?;
    positive("calib-dwell", args.calib_dwell)?;
    if args.max_rot < 0.0 || args.max_trans < 0.0 || args.max_slice_shift < 0.0 {
        return Err(invalid("motion bounds must be non-negative"));
    }
    if args.calib_poses < moco_core::calibration::MIN_ORIENTATIONS {
        return Err(invalid(format!("--calib-poses must be at least {}", moco_core::calibration::MIN_ORIENTATIONS)));
    }
    let fields = args.fields.spec()?;
    let spec = AcquisitionSpec::radial(args.matrix, args.fov, args.shots, args.spokes_per_shot)?;
    let motions = match &args.motion {
        Some(path) => {
            require_file(path)?;
            let m = io::read_motion_csv(path)?;
            if m.len() != args.shots {
                return Err(invalid(format!("{} has {} shots, expected {}", path.display(), m.len(), args.shots)));
            }
            m
        }
        None => random_shot_motions(args.shots, args.max_rot, args.max_trans, args.seed),
    };
    ensure_dir(&args.out)?;
    let out = |name: &str| -> PathBuf { args.out.join(name) };

    let phantom = EllipsoidPhantom::default().rasterize(&spec, &RigidMotion::identity())?;
    let trajectory = make_trajectory(&spec)?;
    log::info!("acquiring {} shots", args.shots);
    let shots = acquire_with_motion(&phantom, &trajectory, &motions)?;
    let still = acquire_with_motion(&phantom, &trajectory, &vec![RigidMotion::identity(); args.shots])?;
    io::write_volume(&out("phantom.vol"), &phantom.volume)?;
    io::write_volume(&out("reference.vol"), &reconstruct(&still, &spec)?)?;
    io::write_shots(&out("shots.bin"), &spec, &shots)?;
    io::write_motion_csv(&out("motion_truth.csv"), &motions)?;

    let mut rng = ChaCha8Rng::seed_from_u64(args.seed ^ 0x51_6d_75_6c);
    let model = if args.misalign { planted_model(&mut rng, &fields)? } else { CalibrationModel::identity() };
    let noise = if args.noiseless { NoiseSpec::noiseless() } else { NoiseSpec::default().with_seed(args.seed) };
    let trace = shot_trace(&motions, args.shot_duration, args.rate)?;
    io::write_trace_csv(&out("trace.csv"), &trace)?;
    let sensor: Vec<SensorSample> = simulate_trajectory(&trace, &fields, &noise, args.rate)?
        .map(|s| corrupt_with_misalignment(&s, &model))
        .collect();
    io::write_sensor_csv(&out("sensor.csv"), &sensor)?;

    let per_pose = ((args.calib_dwell * args.rate).round() as usize).max(1);
    let mut calib_noise = NoiseSource::new(&NoiseSpec { rng_seed: args.seed.wrapping_add(1), ..noise });
    let mut calib = Vec::with_capacity(args.calib_poses * per_pose);
    for p in 0..args.calib_poses {
        let r = random_rotation(&mut rng);
        for j in 0..per_pose {
            let mut s = corrupt_with_misalignment(&measure_stationary(&r, &fields, &mut calib_noise), &model);
            s.t = (p * per_pose + j) as f64 / args.rate;
            calib.push(s);
        }
    }
    io::write_sensor_csv(&out("calib_poses.csv"), &calib)?;
    io::write_calibration(&out("calib_truth.txt"), &model)?;

    let (slice_ref, stack, truth) = slice_dataset(args, &mut rng)?;
    io::write_volume(&out("slice_reference.vol"), &slice_ref)?;
    io::write_volume(&out("slices.vol"), &stack)?;
    io::write_table(&out("slices_truth.csv"), &SLICE_TRUTH_HEADER, truth)?;

    jsonl::write(
        &out("run.jsonl"),
        &[json!({
            "kind": "simulate",
            "seed": args.seed,
            "matrix": args.matrix,
            "fov_mm": args.fov,
            "shots": args.shots,
            "spokes_per_shot": args.spokes_per_shot,
            "shot_duration_s": args.shot_duration,
            "sensor_rate_hz": args.rate,
            "sensor_samples": sensor.len(),
            "noiseless": args.noiseless,
            "misaligned": args.misalign,
            "calibration_samples": calib.len(),
            "slices": stack.nz,
        })],
    )?;
    println!("wrote simulation to {}", display(&args.out));
    Ok(())
}

fn display(p: &Path) -> String {
    p.display().to_string()
}
