//! File formats: numeric CSV tables, binary volume and shot containers, and the
//! key = value calibration file. Binary data is little-endian throughout.

use num_complex::Complex64;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::calibration::{CalibrationModel, CrossCalibration, InternalCalibration};
use crate::error::{Error, Result};
use crate::geometry::{exp_so3, log_so3, Mat3, RigidMotion, Rot3, Vec3};
use crate::kspace::{AcquisitionSpec, KSpaceShot, TrajectoryKind};
use crate::phase_correlation::{Image2D, Volume3D};
use crate::sensor_sim::{GyroSample, MotionTrace, SensorSample, TraceEntry};

pub const SENSOR_HEADER: [&str; 7] = ["t", "ax", "ay", "az", "mx", "my", "mz"];
pub const GYRO_HEADER: [&str; 4] = ["t", "wx", "wy", "wz"];
pub const TRACE_HEADER: [&str; 10] = ["t", "rx", "ry", "rz", "tx", "ty", "tz", "kax", "kay", "kaz"];
pub const ORIENTATION_HEADER: [&str; 4] = ["t", "rx", "ry", "rz"];
pub const MOTION_HEADER: [&str; 7] = ["shot", "rx", "ry", "rz", "tx", "ty", "tz"];

const VOLUME_MAGIC: &[u8; 8] = b"MOCOVOL\0";
const SHOT_MAGIC: &[u8; 8] = b"MOCOSHT\0";
pub const FORMAT_VERSION: u32 = 1;

/// Writes a header row and one row per record; values use Rust's shortest round-trip formatting.
pub fn write_table(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        if row.len() != header.len() {
            return Err(Error::Format(format!("row has {} fields, header {}", row.len(), header.len())));
        }
        w.write_record(row.iter().map(|v| v.to_string())).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a table whose header must equal `header`.
pub fn read_table(path: &Path, header: &[&str]) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(csv_err)?;
    let got: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_owned).collect();
    if got != header {
        return Err(Error::Format(format!("{}: header {:?}, expected {:?}", path.display(), got, header)));
    }
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let row = rec
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Format(format!("{}: row {}: {e}", path.display(), line + 2)))?;
        rows.push(row);
    }
    Ok(rows)
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("{other:?}")),
    }
}

pub fn write_sensor_csv(path: &Path, samples: &[SensorSample]) -> Result<()> {
    write_table(
        path,
        &SENSOR_HEADER,
        samples.iter().map(|s| vec![s.t, s.accel.x, s.accel.y, s.accel.z, s.mag.x, s.mag.y, s.mag.z]),
    )
}

pub fn read_sensor_csv(path: &Path) -> Result<Vec<SensorSample>> {
    Ok(read_table(path, &SENSOR_HEADER)?
        .into_iter()
        .map(|r| SensorSample { t: r[0], accel: Vec3::new(r[1], r[2], r[3]), mag: Vec3::new(r[4], r[5], r[6]) })
        .collect())
}

pub fn write_gyro_csv(path: &Path, samples: &[GyroSample]) -> Result<()> {
    write_table(path, &GYRO_HEADER, samples.iter().map(|s| vec![s.t, s.omega.x, s.omega.y, s.omega.z]))
}

pub fn read_gyro_csv(path: &Path) -> Result<Vec<GyroSample>> {
    Ok(read_table(path, &GYRO_HEADER)?
        .into_iter()
        .map(|r| GyroSample { t: r[0], omega: Vec3::new(r[1], r[2], r[3]) })
        .collect())
}

/// Rotation columns of the trace, orientation and motion tables are axis-angle
/// vectors in degrees; translations are mm.
fn axis_angle_deg(r: &Rot3) -> Vec3 {
    log_so3(r).map(f64::to_degrees)
}

fn from_axis_angle_deg(x: f64, y: f64, z: f64) -> Rot3 {
    exp_so3(&Vec3::new(x, y, z).map(f64::to_radians))
}

pub fn write_trace_csv(path: &Path, trace: &MotionTrace) -> Result<()> {
    write_table(
        path,
        &TRACE_HEADER,
        trace.entries().iter().map(|e| {
            let w = axis_angle_deg(&e.pose.rotation);
            let t = e.pose.translation;
            let a = e.kinematic_accel;
            vec![e.t, w.x, w.y, w.z, t.x, t.y, t.z, a.x, a.y, a.z]
        }),
    )
}

pub fn read_trace_csv(path: &Path, sample_rate: f64) -> Result<MotionTrace> {
    let entries = read_table(path, &TRACE_HEADER)?
        .into_iter()
        .map(|r| TraceEntry {
            t: r[0],
            pose: RigidMotion::new(from_axis_angle_deg(r[1], r[2], r[3]), Vec3::new(r[4], r[5], r[6])),
            kinematic_accel: Vec3::new(r[7], r[8], r[9]),
        })
        .collect();
    MotionTrace::new(sample_rate, entries)
}

pub fn write_orientation_csv(path: &Path, rows: &[(f64, Rot3)]) -> Result<()> {
    write_table(
        path,
        &ORIENTATION_HEADER,
        rows.iter().map(|(t, r)| {
            let w = axis_angle_deg(r);
            vec![*t, w.x, w.y, w.z]
        }),
    )
}

pub fn read_orientation_csv(path: &Path) -> Result<Vec<(f64, Rot3)>> {
    Ok(read_table(path, &ORIENTATION_HEADER)?
        .into_iter()
        .map(|r| (r[0], from_axis_angle_deg(r[1], r[2], r[3])))
        .collect())
}

pub fn write_motion_csv(path: &Path, motions: &[RigidMotion]) -> Result<()> {
    write_table(
        path,
        &MOTION_HEADER,
        motions.iter().enumerate().map(|(i, m)| {
            let w = axis_angle_deg(&m.rotation);
            let t = m.translation;
            vec![i as f64, w.x, w.y, w.z, t.x, t.y, t.z]
        }),
    )
}

pub fn read_motion_csv(path: &Path) -> Result<Vec<RigidMotion>> {
    Ok(read_table(path, &MOTION_HEADER)?
        .into_iter()
        .map(|r| RigidMotion::new(from_axis_angle_deg(r[1], r[2], r[3]), Vec3::new(r[4], r[5], r[6])))
        .collect())
}

struct LeWriter<W: Write>(W);

impl<W: Write> LeWriter<W> {
    fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.0.write_all(b)?;
        Ok(())
    }
    fn u32(&mut self, v: u32) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn f32(&mut self, v: f64) -> Result<()> {
        self.bytes(&(v as f32).to_le_bytes())
    }
    fn f64(&mut self, v: f64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }
}

struct LeReader<R: Read>(R);

impl<R: Read> LeReader<R> {
    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.0
            .read_exact(&mut b)
            .map_err(|e| if e.kind() == std::io::ErrorKind::UnexpectedEof { Error::Format("truncated file".into()) } else { e.into() })?;
        Ok(b)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    fn f32(&mut self) -> Result<f64> {
        Ok(f32::from_le_bytes(self.array()?) as f64)
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }
    fn header(&mut self, magic: &[u8; 8]) -> Result<()> {
        let got: [u8; 8] = self.array()?;
        if &got != magic {
            return Err(Error::Format(format!("bad magic {got:?}")));
        }
        let version = self.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported format version {version}")));
        }
        let _reserved = self.u32()?;
        Ok(())
    }
    fn at_end(&mut self) -> Result<()> {
        let mut b = [0u8; 1];
        match self.0.read(&mut b)? {
            0 => Ok(()),
            _ => Err(Error::Format("trailing bytes".into())),
        }
    }
}

/// Magic (8) + version u32 + reserved u32, dims 3×u32, spacing 3×f32, z grid nz×f32,
/// voxels f32 with x fastest.
pub fn write_volume(path: &Path, v: &Volume3D) -> Result<()> {
    let mut w = LeWriter(BufWriter::new(File::create(path)?));
    w.bytes(VOLUME_MAGIC)?;
    w.u32(FORMAT_VERSION)?;
    w.u32(0)?;
    for d in v.dims() {
        w.u32(d as u32)?;
    }
    for s in v.spacing {
        w.f32(s)?;
    }
    for z in &v.z_grid {
        w.f32(*z)?;
    }
    for x in &v.voxels {
        w.f32(*x)?;
    }
    w.0.flush()?;
    Ok(())
}

pub fn read_volume(path: &Path) -> Result<Volume3D> {
    let mut r = LeReader(BufReader::new(File::open(path)?));
    r.header(VOLUME_MAGIC)?;
    let dims = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
    let n = dims.iter().try_fold(1usize, |a, d| a.checked_mul(*d)).filter(|n| *n <= 1 << 28);
    let n = n.ok_or_else(|| Error::Format(format!("implausible dims {dims:?}")))?;
    let spacing = [r.f32()?, r.f32()?, r.f32()?];
    let z = (0..dims[2]).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
    let voxels = (0..n).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
    r.at_end()?;
    Volume3D::new(dims[0], dims[1], dims[2], voxels, spacing, z)
}

/// A slice stack is a volume whose z layers are individual slices.
pub fn slices_of(v: &Volume3D) -> Vec<Image2D> {
    (0..v.nz).map(|k| v.slice(k)).collect()
}

/// Magic + version, spec (γ f64, fov 3×f64, matrix 3×u32, trajectory u32, shots,
/// samples/shot, spokes/shot u32), then per shot: index, count, excluded (u32),
/// motion (R row-major + r, 12×f64), k (3×f32 each), samples (re, im f32 each).
pub fn write_shots(path: &Path, spec: &AcquisitionSpec, shots: &[KSpaceShot]) -> Result<()> {
    let mut w = LeWriter(BufWriter::new(File::create(path)?));
    w.bytes(SHOT_MAGIC)?;
    w.u32(FORMAT_VERSION)?;
    w.u32(0)?;
    w.f64(spec.gamma_gyro)?;
    for f in spec.fov {
        w.f64(f)?;
    }
    for m in spec.matrix {
        w.u32(m as u32)?;
    }
    w.u32(match spec.trajectory {
        TrajectoryKind::Radial3d => 0,
        TrajectoryKind::Cartesian2dStack => 1,
    })?;
    w.u32(spec.shots as u32)?;
    w.u32(spec.samples_per_shot as u32)?;
    w.u32(spec.spokes_per_shot as u32)?;
    w.u32(shots.len() as u32)?;
    for s in shots {
        w.u32(s.shot_index as u32)?;
        w.u32(s.samples.len() as u32)?;
        w.u32(s.excluded as u32)?;
        for row in s.motion.rotation.to_rows() {
            for v in row {
                w.f64(v)?;
            }
        }
        for v in s.motion.translation.iter() {
            w.f64(*v)?;
        }
        for k in &s.k_coords {
            for v in k.iter() {
                w.f32(*v)?;
            }
        }
        for c in &s.samples {
            w.f32(c.re)?;
            w.f32(c.im)?;
        }
    }
    w.0.flush()?;
    Ok(())
}

pub fn read_shots(path: &Path) -> Result<(AcquisitionSpec, Vec<KSpaceShot>)> {
    let mut r = LeReader(BufReader::new(File::open(path)?));
    r.header(SHOT_MAGIC)?;
    let gamma_gyro = r.f64()?;
    let fov = [r.f64()?, r.f64()?, r.f64()?];
    let matrix = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
    let trajectory = match r.u32()? {
        0 => TrajectoryKind::Radial3d,
        1 => TrajectoryKind::Cartesian2dStack,
        t => return Err(Error::Format(format!("unknown trajectory code {t}"))),
    };
    let spec = AcquisitionSpec {
        gamma_gyro,
        fov,
        matrix,
        trajectory,
        shots: r.u32()? as usize,
        samples_per_shot: r.u32()? as usize,
        spokes_per_shot: r.u32()? as usize,
    };
    spec.validate()?;
    let count = r.u32()? as usize;
    let mut shots = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let shot_index = r.u32()? as usize;
        let n = r.u32()? as usize;
        if n > 1 << 26 {
            return Err(Error::Format(format!("implausible sample count {n}")));
        }
        let excluded = r.u32()? as usize;
        let mut m = [0.0; 9];
        for v in &mut m {
            *v = r.f64()?;
        }
        let rotation = Rot3::from_matrix(Mat3::from_row_slice(&m))?;
        let translation = Vec3::new(r.f64()?, r.f64()?, r.f64()?);
        let k_coords = (0..n).map(|_| Ok(Vec3::new(r.f32()?, r.f32()?, r.f32()?))).collect::<Result<Vec<_>>>()?;
        let samples = (0..n).map(|_| Ok(Complex64::new(r.f32()?, r.f32()?))).collect::<Result<Vec<_>>>()?;
        shots.push(KSpaceShot { shot_index, k_coords, samples, motion: RigidMotion::new(rotation, translation), excluded });
    }
    r.at_end()?;
    Ok((spec, shots))
}

/// `key = v1 v2 …` lines; `#` starts a comment. Keys: `accel_matrix` (9, row-major),
/// `accel_bias` (3), `mag_matrix` (9), `mag_bias` (3), `cross_axis_angle_deg` (3).
pub fn write_calibration(path: &Path, model: &CalibrationModel) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
    let rows = |m: &Mat3| (0..3).flat_map(|i| (0..3).map(move |j| m[(i, j)])).collect::<Vec<_>>();
    writeln!(f, "# sensor calibration")?;
    writeln!(f, "accel_matrix = {}", join(&rows(model.accel.matrix())))?;
    writeln!(f, "accel_bias = {}", join(model.accel.bias().as_slice()))?;
    writeln!(f, "mag_matrix = {}", join(&rows(model.mag.matrix())))?;
    writeln!(f, "mag_bias = {}", join(model.mag.bias().as_slice()))?;
    writeln!(f, "cross_axis_angle_deg = {}", join(axis_angle_deg(&model.cross.r_cs).as_slice()))?;
    f.flush()?;
    Ok(())
}

pub fn read_calibration(path: &Path) -> Result<CalibrationModel> {
    let text = std::fs::read_to_string(path)?;
    let mut model = CalibrationModel::identity();
    let mut accel = (Mat3::identity(), Vec3::zeros());
    let mut mag = (Mat3::identity(), Vec3::zeros());
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("line {}: expected key = value", no + 1)))?;
        let vals = value
            .split_whitespace()
            .map(str::parse::<f64>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Format(format!("line {}: {e}", no + 1)))?;
        let need = |n: usize| -> Result<()> {
            if vals.len() == n {
                Ok(())
            } else {
                Err(Error::Format(format!("line {}: {} expects {n} values", no + 1, key.trim())))
            }
        };
        match key.trim() {
            "accel_matrix" => {
                need(9)?;
                accel.0 = Mat3::from_row_slice(&vals);
            }
            "accel_bias" => {
                need(3)?;
                accel.1 = Vec3::from_row_slice(&vals);
            }
            "mag_matrix" => {
                need(9)?;
                mag.0 = Mat3::from_row_slice(&vals);
            }
            "mag_bias" => {
                need(3)?;
                mag.1 = Vec3::from_row_slice(&vals);
            }
            "cross_axis_angle_deg" => {
                need(3)?;
                model.cross = CrossCalibration::from_axis_angle(&Vec3::from_row_slice(&vals).map(f64::to_radians));
            }
            other => return Err(Error::Format(format!("line {}: unknown key '{other}'", no + 1))),
        }
    }
    model.accel = InternalCalibration::new(accel.0, accel.1)?;
    model.mag = InternalCalibration::new(mag.0, mag.1)?;
    Ok(model)
}
