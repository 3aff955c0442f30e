//! Desk-scale MR acquisition: direct nonuniform DFT sampling of a voxel phantom,
//! per-shot rigid motion, retrospective correction and adjoint reconstruction.
//!
//! Conventions:
//! - voxel centers sit at `x = (i − n/2)·Δ` on each axis, so `x = 0` is the FOV center;
//! - `s(k) = Σ ρ(x)·exp(−i2π kᵀx)`, `k` in cycles/mm;
//! - a motion `(R, r)` moves the object actively: `ρ'(x) = ρ(Rᵀ(x − r))`, hence
//!   `s'(k) = exp(−i2π kᵀr)·s(Rᵀk)`; correction maps `k → Rᵀk` and multiplies
//!   by `exp(+i2π kᵀr)`.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geometry::{exp_so3, RigidMotion, Rot3, Vec3};
use crate::phase_correlation::{apply_phase_shift_3d, phase_correlate_3d, Volume3D};

/// Proton gyromagnetic ratio, rad/(s·T).
pub const GAMMA_PROTON: f64 = 2.675_221_874e8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryKind {
    Radial3d,
    Cartesian2dStack,
}

impl std::str::FromStr for TrajectoryKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "radial3d" => Ok(Self::Radial3d),
            "cartesian2d_stack" => Ok(Self::Cartesian2dStack),
            other => Err(Error::InvalidArgument(format!("unknown trajectory kind '{other}'"))),
        }
    }
}

impl std::fmt::Display for TrajectoryKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Radial3d => "radial3d",
            Self::Cartesian2dStack => "cartesian2d_stack",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcquisitionSpec {
    /// rad/(s·T); gradients are folded into k, so this is carried for reference only
    pub gamma_gyro: f64,
    /// mm per axis
    pub fov: [f64; 3],
    pub matrix: [usize; 3],
    pub trajectory: TrajectoryKind,
    pub shots: usize,
    pub samples_per_shot: usize,
    /// radial only; Cartesian shots hold whole k-space lines
    pub spokes_per_shot: usize,
}

impl AcquisitionSpec {
    /// Isotropic 3D radial: `spokes_per_shot` spokes of `n + 1` samples per shot.
    pub fn radial(n: usize, fov: f64, shots: usize, spokes_per_shot: usize) -> Result<Self> {
        let spec = Self {
            gamma_gyro: GAMMA_PROTON,
            fov: [fov; 3],
            matrix: [n; 3],
            trajectory: TrajectoryKind::Radial3d,
            shots,
            samples_per_shot: spokes_per_shot * (n + 1),
            spokes_per_shot,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Full Cartesian grid, read out along x, lines split into `shots` contiguous groups.
    pub fn cartesian(matrix: [usize; 3], fov: [f64; 3], shots: usize) -> Result<Self> {
        let lines = matrix[1] * matrix[2];
        if shots == 0 || lines % shots != 0 {
            return Err(Error::InvalidArgument(format!("{lines} lines do not split into {shots} shots")));
        }
        let spec = Self {
            gamma_gyro: GAMMA_PROTON,
            fov,
            matrix,
            trajectory: TrajectoryKind::Cartesian2dStack,
            shots,
            samples_per_shot: lines / shots * matrix[0],
            spokes_per_shot: 0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        for &m in &self.matrix {
            if !m.is_power_of_two() || !(16..=128).contains(&m) {
                return Err(Error::InvalidArgument(format!("matrix size {m} is not a power of two in [16, 128]")));
            }
        }
        if self.fov.iter().any(|f| !(*f > 0.0)) {
            return Err(Error::InvalidArgument("field of view must be positive".into()));
        }
        if self.shots == 0 {
            return Err(Error::InvalidArgument("at least one shot required".into()));
        }
        match self.trajectory {
            TrajectoryKind::Radial3d => {
                if self.matrix.iter().any(|&m| m != self.matrix[0]) || self.fov.iter().any(|&f| f != self.fov[0]) {
                    return Err(Error::InvalidArgument("radial acquisition requires an isotropic grid".into()));
                }
                if self.spokes_per_shot == 0 || self.samples_per_shot != self.spokes_per_shot * (self.matrix[0] + 1) {
                    return Err(Error::InvalidArgument("samples per shot must equal spokes × (n + 1)".into()));
                }
            }
            TrajectoryKind::Cartesian2dStack => {
                let lines = self.matrix[1] * self.matrix[2];
                if lines % self.shots != 0 || self.samples_per_shot != lines / self.shots * self.matrix[0] {
                    return Err(Error::InvalidArgument("Cartesian shots must hold whole lines".into()));
                }
            }
        }
        Ok(())
    }

    pub fn voxel_size(&self) -> [f64; 3] {
        [0, 1, 2].map(|a| self.fov[a] / self.matrix[a] as f64)
    }

    /// Per-axis Nyquist limit `1/(2Δ)`, cycles/mm.
    pub fn nyquist(&self) -> [f64; 3] {
        self.voxel_size().map(|d| 0.5 / d)
    }

    pub fn total_spokes(&self) -> usize {
        self.shots * self.spokes_per_shot
    }

    /// Empty reconstruction grid with voxel spacing `fov / matrix`.
    pub fn grid(&self) -> Volume3D {
        grid_volume(self.matrix, self.voxel_size())
    }
}

fn grid_volume(dims: [usize; 3], spacing: [f64; 3]) -> Volume3D {
    Volume3D::uniform(dims[0], dims[1], dims[2], vec![0.0; dims.iter().product()], spacing)
        .expect("grid dimensions are positive")
}

#[derive(Debug, Clone, PartialEq)]
pub struct KSpaceShot {
    pub shot_index: usize,
    /// cycles/mm
    pub k_coords: Vec<Vec3>,
    pub samples: Vec<Complex64>,
    pub motion: RigidMotion,
    /// samples dropped because the rotated coordinate left the Nyquist box
    pub excluded: usize,
}

impl KSpaceShot {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Proton-density volume, nonnegative with a zero margin at the FOV border.
#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub volume: Volume3D,
}

pub const PHANTOM_MARGIN_VOXELS: usize = 2;

impl Phantom {
    pub fn new(volume: Volume3D) -> Result<Self> {
        if volume.voxels.iter().any(|v| *v < 0.0) {
            return Err(Error::InvalidArgument("phantom has negative density".into()));
        }
        let m = PHANTOM_MARGIN_VOXELS;
        let [nx, ny, nz] = volume.dims();
        if nx <= 2 * m || ny <= 2 * m || nz <= 2 * m {
            return Err(Error::InvalidArgument("phantom grid too small for its margin".into()));
        }
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let inner = (m..nx - m).contains(&x) && (m..ny - m).contains(&y) && (m..nz - m).contains(&z);
                    if !inner && volume.get(x, y, z) != 0.0 {
                        return Err(Error::InvalidArgument(format!(
                            "phantom support reaches voxel ({x}, {y}, {z}) inside the {m}-voxel margin"
                        )));
                    }
                }
            }
        }
        Ok(Self { volume })
    }
}

/// One term of an additive ellipsoid phantom, in units of the half-FOV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipsoid {
    pub intensity: f64,
    pub semi_axes: [f64; 3],
    pub center: [f64; 3],
    /// rotation about z, degrees
    pub phi_deg: f64,
}

/// 3D Shepp-Logan-style table with the high-contrast intensities of the
/// modified 2D phantom.
#[rustfmt::skip]
pub const SHEPP_LOGAN_3D: [Ellipsoid; 10] = [
    Ellipsoid { intensity:  1.0, semi_axes: [0.6900, 0.920, 0.810], center: [ 0.00,  0.0000,  0.00], phi_deg:   0.0 },
    Ellipsoid { intensity: -0.8, semi_axes: [0.6624, 0.874, 0.780], center: [ 0.00, -0.0184,  0.00], phi_deg:   0.0 },
    Ellipsoid { intensity: -0.2, semi_axes: [0.1100, 0.310, 0.220], center: [ 0.22,  0.0000,  0.00], phi_deg: -18.0 },
    Ellipsoid { intensity: -0.2, semi_axes: [0.1600, 0.410, 0.280], center: [-0.22,  0.0000,  0.00], phi_deg:  18.0 },
    Ellipsoid { intensity:  0.1, semi_axes: [0.2100, 0.250, 0.410], center: [ 0.00,  0.3500, -0.15], phi_deg:   0.0 },
    Ellipsoid { intensity:  0.1, semi_axes: [0.0460, 0.046, 0.050], center: [ 0.00,  0.1000,  0.25], phi_deg:   0.0 },
    Ellipsoid { intensity:  0.1, semi_axes: [0.0460, 0.046, 0.050], center: [ 0.00, -0.1000,  0.25], phi_deg:   0.0 },
    Ellipsoid { intensity:  0.1, semi_axes: [0.0460, 0.023, 0.050], center: [-0.08, -0.6050,  0.00], phi_deg:   0.0 },
    Ellipsoid { intensity:  0.1, semi_axes: [0.0230, 0.023, 0.020], center: [ 0.00, -0.6060,  0.00], phi_deg:   0.0 },
    Ellipsoid { intensity:  0.1, semi_axes: [0.0230, 0.046, 0.020], center: [ 0.06, -0.6050,  0.00], phi_deg:   0.0 },
];

/// Analytic ellipsoid phantom with raised-cosine edges.
#[derive(Debug, Clone, PartialEq)]
pub struct EllipsoidPhantom {
    pub ellipsoids: Vec<Ellipsoid>,
    /// unit coordinates scale to `extent · fov/2` mm
    pub extent: f64,
    /// half width of the edge ramp, voxels
    pub edge_voxels: f64,
}

impl Default for EllipsoidPhantom {
    fn default() -> Self {
        Self { ellipsoids: SHEPP_LOGAN_3D.to_vec(), extent: 0.5, edge_voxels: 2.5 }
    }
}

impl EllipsoidPhantom {
    /// Density at `p` (mm, FOV-centered) for a FOV half-width `half` and ramp half width `w` mm.
    fn density(&self, p: &Vec3, half: f64, w: f64) -> f64 {
        let scale = self.extent * half;
        let v: f64 = self
            .ellipsoids
            .iter()
            .map(|e| {
                let (s, c) = e.phi_deg.to_radians().sin_cos();
                let q = p - Vec3::from(e.center) * scale;
                // body frame: rotate by −phi about z
                let local = Vec3::new(c * q.x + s * q.y, -s * q.x + c * q.y, q.z);
                let axes = Vec3::from(e.semi_axes) * scale;
                let rn = local.component_div(&axes).norm();
                let d = if rn > 0.0 { local.norm() * (rn - 1.0) / rn } else { -axes.min() };
                let ramp = if d <= -w {
                    1.0
                } else if d >= w {
                    0.0
                } else {
                    0.5 * (1.0 - (0.5 * PI * d / w).sin())
                };
                e.intensity * ramp
            })
            .sum();
        v.max(0.0)
    }

    /// Voxelized object after the active motion `m`: `ρ'(x) = ρ(Rᵀ(x − r))`.
    pub fn rasterize(&self, spec: &AcquisitionSpec, m: &RigidMotion) -> Result<Phantom> {
        let d = spec.voxel_size();
        let n = spec.matrix;
        let half = 0.5 * spec.fov.iter().cloned().fold(f64::INFINITY, f64::min);
        let w = self.edge_voxels * d.iter().cloned().fold(f64::INFINITY, f64::min);
        let rt = m.rotation.transpose();
        let vol = Volume3D::from_fn(n, d, |i, j, l| {
            let x = Vec3::new(
                (i as f64 - (n[0] / 2) as f64) * d[0],
                (j as f64 - (n[1] / 2) as f64) * d[1],
                (l as f64 - (n[2] / 2) as f64) * d[2],
            );
            self.density(&(&rt * &(x - m.translation)), half, w)
        })?;
        Phantom::new(vol)
    }
}

/// Centered coordinates of axis samples, mm.
fn axis_coords(n: usize, d: f64) -> Vec<f64> {
    (0..n).map(|i| (i as f64 - (n / 2) as f64) * d).collect()
}

fn phases(k: f64, coords: &[f64], sign: f64) -> Vec<Complex64> {
    coords.iter().map(|x| Complex64::from_polar(1.0, sign * 2.0 * PI * k * x)).collect()
}

fn within_nyquist(k: &Vec3, limit: &[f64; 3]) -> bool {
    (0..3).all(|a| k[a].abs() <= limit[a] * (1.0 + 1e-9))
}

fn volume_nyquist(v: &Volume3D) -> [f64; 3] {
    v.spacing.map(|d| 0.5 / d)
}

/// Nonzero runs `(row_offset, i_lo, i_hi)` per (y, z) row, to skip empty space.
fn support_rows(v: &Volume3D) -> Vec<(usize, usize, usize, usize, usize)> {
    let mut rows = Vec::new();
    for l in 0..v.nz {
        for j in 0..v.ny {
            let base = v.index(0, j, l);
            let row = &v.voxels[base..base + v.nx];
            if let (Some(lo), Some(hi)) = (row.iter().position(|x| *x != 0.0), row.iter().rposition(|x| *x != 0.0)) {
                rows.push((j, l, base, lo, hi + 1));
            }
        }
    }
    rows
}

/// `s(k) = Σ ρ(x)·exp(−i2π kᵀx)` over voxel centers, by direct summation.
pub fn acquire(phantom: &Phantom, k_coords: &[Vec3]) -> Result<Vec<Complex64>> {
    let v = &phantom.volume;
    let limit = volume_nyquist(v);
    if let Some(k) = k_coords.iter().find(|k| !within_nyquist(k, &limit)) {
        return Err(Error::BeyondNyquist { k: k.norm(), limit: limit[0].min(limit[1]).min(limit[2]) });
    }
    Ok(acquire_unchecked(v, k_coords))
}

fn acquire_unchecked(v: &Volume3D, k_coords: &[Vec3]) -> Vec<Complex64> {
    let cx = axis_coords(v.nx, v.spacing[0]);
    let cy = axis_coords(v.ny, v.spacing[1]);
    let cz = axis_coords(v.nz, v.spacing[2]);
    let rows = support_rows(v);
    k_coords
        .par_iter()
        .map(|k| {
            let ex = phases(k.x, &cx, -1.0);
            let ey = phases(k.y, &cy, -1.0);
            let ez = phases(k.z, &cz, -1.0);
            let mut acc = Complex64::default();
            for &(j, l, base, lo, hi) in &rows {
                let mut row = Complex64::default();
                for i in lo..hi {
                    row += ex[i] * v.voxels[base + i];
                }
                acc += row * ey[j] * ez[l];
            }
            acc
        })
        .collect()
}

/// Per-shot k-space coordinate sets.
pub fn make_trajectory(spec: &AcquisitionSpec) -> Result<Vec<Vec<Vec3>>> {
    spec.validate()?;
    match spec.trajectory {
        TrajectoryKind::Radial3d => {
            let n = spec.matrix[0] as i64;
            let dk = 1.0 / spec.fov[0];
            let dirs = spoke_directions(spec.total_spokes());
            let mut shots = vec![Vec::with_capacity(spec.samples_per_shot); spec.shots];
            for (i, d) in dirs.iter().enumerate() {
                let shot = &mut shots[i % spec.shots];
                for m in -n / 2..=n / 2 {
                    shot.push(d * (m as f64 * dk));
                }
            }
            Ok(shots)
        }
        TrajectoryKind::Cartesian2dStack => {
            let [nx, ny, nz] = spec.matrix;
            let dk = [0, 1, 2].map(|a| 1.0 / spec.fov[a]);
            let signed = |i: usize, n: usize| i as f64 - (n / 2) as f64;
            let lines_per_shot = ny * nz / spec.shots;
            let mut shots = vec![Vec::with_capacity(spec.samples_per_shot); spec.shots];
            for line in 0..ny * nz {
                let (j, l) = (line % ny, line / ny);
                let shot = &mut shots[line / lines_per_shot];
                for i in 0..nx {
                    shot.push(Vec3::new(signed(i, nx) * dk[0], signed(j, ny) * dk[1], signed(l, nz) * dk[2]));
                }
            }
            Ok(shots)
        }
    }
}

/// Spiral-phyllotaxis directions on the upper hemisphere (each spoke covers ±d).
pub fn spoke_directions(count: usize) -> Vec<Vec3> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|i| {
            let z = 1.0 - (i as f64 + 0.5) / count as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = i as f64 * golden;
            Vec3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

/// Samples the moved object: `exp(−i2π kᵀr)·s(Rᵀk)`. Coordinates whose
/// `Rᵀk` leaves the Nyquist box are dropped and counted.
pub fn corrupt_shot(phantom: &Phantom, k_coords: &[Vec3], motion: &RigidMotion, shot_index: usize) -> KSpaceShot {
    let limit = volume_nyquist(&phantom.volume);
    let rt = motion.rotation.transpose();
    let mut kept = Vec::with_capacity(k_coords.len());
    let mut source = Vec::with_capacity(k_coords.len());
    for k in k_coords {
        let kr = &rt * k;
        if within_nyquist(&kr, &limit) {
            kept.push(*k);
            source.push(kr);
        }
    }
    let excluded = k_coords.len() - kept.len();
    if excluded > 0 {
        log::warn!("shot {shot_index}: {excluded} samples beyond Nyquist after rotation");
    }
    let samples = acquire_unchecked(&phantom.volume, &source)
        .into_iter()
        .zip(&kept)
        .map(|(s, k)| s * Complex64::from_polar(1.0, -2.0 * PI * k.dot(&motion.translation)))
        .collect();
    KSpaceShot { shot_index, k_coords: kept, samples, motion: *motion, excluded }
}

/// Undoes `motion`: `k → Rᵀk`, samples times `exp(+i2π kᵀr)` (with the original `k`).
pub fn correct_shot(shot: &KSpaceShot, motion: &RigidMotion) -> KSpaceShot {
    let rt = motion.rotation.transpose();
    let (k_coords, samples) = shot
        .k_coords
        .iter()
        .zip(&shot.samples)
        .map(|(k, s)| (&rt * k, s * Complex64::from_polar(1.0, 2.0 * PI * k.dot(&motion.translation))))
        .unzip();
    KSpaceShot {
        shot_index: shot.shot_index,
        k_coords,
        samples,
        motion: RigidMotion::identity(),
        excluded: shot.excluded,
    }
}

/// Corrects the rotation only, leaving the translation phase in the samples.
pub fn correct_rotation(shot: &KSpaceShot, rotation: &Rot3) -> KSpaceShot {
    correct_shot(shot, &RigidMotion::new(*rotation, Vec3::zeros()))
}

/// Per-sample k-space volume used as the reconstruction quadrature weight.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum DensityCompensation {
    /// Shell area times spacing, `4πm²Δk³`, split evenly among the samples on shell
    /// `m = round(|k|/Δk)`; zero at DC. This is the trapezoid rule along each spoke
    /// for the `|k|²` Jacobian, exact for objects narrower than half the FOV.
    #[default]
    ShellArea,
    /// Cell volume `4π(m² + 1/12)Δk³` per shell, DC included
    ShellVolume,
    /// `|k|²`, with every DC sample given the smallest nonzero weight
    RampSquared,
    Uniform,
}

/// Relative solid angle owned by each sample's direction, from a few Pipe–Menon
/// iterations with a von Mises–Fisher kernel over the distinct directions. Uniform
/// direction sets get equal shares; rotated per-shot sets that clump or leave gaps
/// get corrected. DC samples get share 1.
fn solid_angle_shares(ks: &[&Vec3]) -> Vec<f64> {
    use std::collections::HashMap;
    // directions closer than TOL are one spoke; covers coordinates stored at f32
    const CELL: f64 = 1e-4;
    const TOL: f64 = 1e-6;
    let mut grid: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    let mut dirs: Vec<Vec3> = Vec::new();
    let keys: Vec<Option<usize>> = ks
        .iter()
        .map(|k| {
            let r = k.norm();
            if r == 0.0 {
                return None;
            }
            let u = *k / r;
            let cell = [0, 1, 2].map(|a| (u[a] / CELL).floor() as i64);
            for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        let near = grid.get(&[cell[0] + dx, cell[1] + dy, cell[2] + dz]);
                        if let Some(&i) = near.and_then(|v| v.iter().find(|&&i| (dirs[i] - u).norm() < TOL)) {
                            return Some(i);
                        }
                    }
                }
            }
            dirs.push(u);
            grid.entry(cell).or_default().push(dirs.len() - 1);
            Some(dirs.len() - 1)
        })
        .collect();
    let n = dirs.len();
    let mut share = vec![1.0; n];
    if n > 1 {
        // kernel width 1.5× the mean direction spacing
        let kappa = n as f64 / (4.0 * PI) / 2.25;
        for _ in 0..4 {
            let density: Vec<f64> = dirs
                .par_iter()
                .map(|u| dirs.iter().zip(&share).map(|(v, a)| a * (kappa * (u.dot(v) - 1.0)).exp()).sum())
                .collect();
            for (a, d) in share.iter_mut().zip(&density) {
                *a /= d;
            }
            let mean = share.iter().sum::<f64>() / n as f64;
            share.iter_mut().for_each(|a| *a /= mean);
        }
    }
    keys.into_iter().map(|k| k.map_or(1.0, |i| share[i])).collect()
}

/// Weights in cycles³/mm³. Cartesian samples own one grid cell; radial ones use
/// the chosen rule, rescaled so every rule covers the same total volume.
fn density_weights(shots: &[KSpaceShot], spec: &AcquisitionSpec, dc: DensityCompensation) -> Vec<f64> {
    let ks: Vec<&Vec3> = shots.iter().flat_map(|s| s.k_coords.iter()).collect();
    if spec.trajectory == TrajectoryKind::Cartesian2dStack {
        let cell = 1.0 / (spec.fov[0] * spec.fov[1] * spec.fov[2]);
        return vec![cell; ks.len()];
    }
    let dk = 1.0 / spec.fov[0];
    let shell_of = |k: &Vec3| (k.norm() / dk).round() as usize;
    let mut counts: Vec<usize> = Vec::new();
    for k in &ks {
        let m = shell_of(k);
        if m >= counts.len() {
            counts.resize(m + 1, 0);
        }
        counts[m] += 1;
    }
    let solid = solid_angle_shares(&ks);
    let mut shell_share = vec![0.0; counts.len()];
    for (k, a) in ks.iter().zip(&solid) {
        shell_share[shell_of(k)] += a;
    }
    let per_shell = |volume: &dyn Fn(f64) -> f64| -> Vec<f64> {
        ks.iter()
            .zip(&solid)
            .map(|(k, a)| {
                let m = shell_of(k);
                volume(m as f64) * a / shell_share[m]
            })
            .collect()
    };
    let exact = per_shell(&|m| 4.0 * PI * m * m * dk.powi(3));
    let raw: Vec<f64> = match dc {
        DensityCompensation::ShellArea => return exact,
        DensityCompensation::ShellVolume => {
            per_shell(&|m| if m == 0.0 { PI / 6.0 * dk.powi(3) } else { 4.0 * PI * (m * m + 1.0 / 12.0) * dk.powi(3) })
        }
        DensityCompensation::Uniform => vec![1.0; ks.len()],
        DensityCompensation::RampSquared => {
            let tiny = 1e-6 * dk;
            let r2: Vec<f64> = ks.iter().map(|k| k.norm_squared()).collect();
            let min_nonzero = r2.iter().cloned().filter(|w| *w > tiny * tiny).fold(f64::INFINITY, f64::min);
            let floor = if min_nonzero.is_finite() { min_nonzero } else { 1.0 };
            r2.into_iter().map(|w| if w > tiny * tiny { w } else { floor }).collect()
        }
    };
    let scale = exact.iter().sum::<f64>() / raw.iter().sum::<f64>();
    raw.into_iter().map(|w| w * scale).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconOptions {
    /// output grid; the FOV is kept, so spacing is `fov / dims`
    pub dims: [usize; 3],
    pub density: DensityCompensation,
}

impl ReconOptions {
    pub fn for_spec(spec: &AcquisitionSpec) -> Self {
        Self { dims: spec.matrix, density: DensityCompensation::default() }
    }
}

/// Adjoint NUDFT with density compensation on the spec's grid.
pub fn reconstruct(shots: &[KSpaceShot], spec: &AcquisitionSpec) -> Result<Volume3D> {
    reconstruct_with(shots, spec, &ReconOptions::for_spec(spec))
}

/// `image(x) = c·ℜ Σ w(k)·s(k)·exp(+i2π kᵀx)`, with `w` the
/// sample's k-space volume and `c = ΔxΔyΔz`, the Riemann sum of the inverse
/// Fourier integral. Samples beyond the output grid's Nyquist
/// box are ignored.
pub fn reconstruct_with(shots: &[KSpaceShot], spec: &AcquisitionSpec, opts: &ReconOptions) -> Result<Volume3D> {
    if shots.is_empty() {
        return Err(Error::Empty("shot list"));
    }
    for s in shots {
        if s.k_coords.len() != s.samples.len() {
            return Err(Error::DimensionMismatch(format!(
                "shot {}: {} coordinates, {} samples",
                s.shot_index,
                s.k_coords.len(),
                s.samples.len()
            )));
        }
    }
    let spacing = [0, 1, 2].map(|a| spec.fov[a] / opts.dims[a] as f64);
    let mut out = grid_volume(opts.dims, spacing);
    let limit = volume_nyquist(&out);
    let weights = density_weights(shots, spec, opts.density);
    let picked: Vec<(Vec3, Complex64, f64)> = shots
        .iter()
        .flat_map(|s| s.k_coords.iter().zip(&s.samples))
        .zip(weights)
        .filter(|((k, _), _)| within_nyquist(k, &limit))
        .map(|((k, s), w)| (*k, *s, w))
        .collect();
    if picked.is_empty() {
        return Ok(out);
    }

    let [nx, ny, nz] = opts.dims;
    let cx = axis_coords(nx, spacing[0]);
    let cy = axis_coords(ny, spacing[1]);
    let cz = axis_coords(nz, spacing[2]);
    let tables: Vec<(Vec<Complex64>, Vec<Complex64>, Vec<Complex64>)> = picked
        .par_iter()
        .map(|(k, _, _)| (phases(k.x, &cx, 1.0), phases(k.y, &cy, 1.0), phases(k.z, &cz, 1.0)))
        .collect();

    // weights are k-space volumes; the Nyquist cube has volume 1/(ΔxΔyΔz)
    let c = spacing[0] * spacing[1] * spacing[2];

    out.voxels
        .par_chunks_mut(nx * ny)
        .enumerate()
        .for_each(|(l, plane)| {
            for ((_, s, w), (ex, ey, ez)) in picked.iter().zip(&tables) {
                let cz = s * ez[l] * (w * c);
                for j in 0..ny {
                    let cyz = cz * ey[j];
                    let row = &mut plane[j * nx..(j + 1) * nx];
                    for (v, e) in row.iter_mut().zip(ex) {
                        *v += cyz.re * e.re - cyz.im * e.im;
                    }
                }
            }
        });
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TranslationOptions {
    pub low_res: [usize; 3],
    /// extra correlate-and-unshift passes after the first estimate
    pub refinements: usize,
}

impl Default for TranslationOptions {
    fn default() -> Self {
        Self { low_res: [16; 3], refinements: 2 }
    }
}

/// Per-shot translations (mm) relative to shot 0, whose pose is taken as the reference.
///
/// Each shot is rotation-corrected, reconstructed on a low-resolution grid and
/// phase-correlated against shot 0. The correlation yields `Rᵀr`; the returned
/// value is `r = R·(Rᵀr)`.
pub fn estimate_shot_translations(
    shots: &[KSpaceShot],
    rotations: &[Rot3],
    spec: &AcquisitionSpec,
) -> Result<Vec<Vec3>> {
    estimate_shot_translations_with(shots, rotations, spec, &TranslationOptions::default())
}

pub fn estimate_shot_translations_with(
    shots: &[KSpaceShot],
    rotations: &[Rot3],
    spec: &AcquisitionSpec,
    opts: &TranslationOptions,
) -> Result<Vec<Vec3>> {
    if shots.len() < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 shots, got {}", shots.len())));
    }
    if rotations.len() != shots.len() {
        return Err(Error::MisalignedStreams(shots.len(), rotations.len()));
    }
    let recon = ReconOptions { dims: opts.low_res, density: DensityCompensation::default() };
    let volumes = shots
        .iter()
        .zip(rotations)
        .map(|(s, r)| reconstruct_with(&[correct_rotation(s, r)], spec, &recon))
        .collect::<Result<Vec<_>>>()?;
    let spacing = volumes[0].spacing;
    let reference = &volumes[0];
    let mut out = vec![Vec3::zeros()];
    for (v, r) in volumes.iter().zip(rotations).skip(1) {
        let mut total = [0.0; 3];
        let mut moving = v.clone();
        for pass in 0..=opts.refinements {
            let e = phase_correlate_3d(reference, &moving)?;
            let step = [e.dx, e.dy, e.dz];
            (0..3).for_each(|a| total[a] += step[a]);
            if pass < opts.refinements {
                moving = apply_phase_shift_3d(v, total.map(|t| -t));
            }
        }
        let t_body = Vec3::new(total[0] * spacing[0], total[1] * spacing[1], total[2] * spacing[2]);
        out.push(r * &t_body);
    }
    Ok(out)
}

/// Per-shot motion estimates and the shots corrected with them.
#[derive(Debug, Clone)]
pub struct Retrospective {
    /// rotations as supplied, translations from [`estimate_shot_translations`]
    pub motions: Vec<RigidMotion>,
    pub corrected: Vec<KSpaceShot>,
}

/// Retrospective correction with externally measured rotations: translations
/// are estimated against shot 0, then every shot is corrected for its full motion.
pub fn correct_retrospectively(shots: &[KSpaceShot], rotations: &[Rot3], spec: &AcquisitionSpec) -> Result<Retrospective> {
    let translations = estimate_shot_translations(shots, rotations, spec)?;
    let motions: Vec<RigidMotion> = rotations.iter().zip(translations).map(|(r, t)| RigidMotion::new(*r, t)).collect();
    let corrected = shots.iter().zip(&motions).map(|(s, m)| correct_shot(s, m)).collect();
    Ok(Retrospective { motions, corrected })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageMetrics {
    pub ssim: f64,
    pub nvol: f64,
    pub nmi: f64,
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const NMI_BINS: usize = 64;

/// SSIM, normalized variance of the Laplacian and normalized mutual information.
pub fn score(image: &Volume3D, reference: &Volume3D) -> Result<ImageMetrics> {
    if image.dims() != reference.dims() {
        return Err(Error::DimensionMismatch(format!("{:?} vs {:?}", image.dims(), reference.dims())));
    }
    let vol_ref = variance_of_laplacian(reference);
    Ok(ImageMetrics {
        ssim: ssim(image, reference),
        nvol: if vol_ref > 0.0 { variance_of_laplacian(image) / vol_ref } else { f64::NAN },
        nmi: normalized_mutual_information(image, reference, NMI_BINS),
    })
}

fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size / 2) as f64;
    let k: Vec<f64> = (0..size).map(|i| (-0.5 * ((i as f64 - c) / sigma).powi(2)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering: output dims shrink by `size − 1` per axis.
fn filter_valid(data: &[f64], dims: [usize; 3], kernel: &[f64]) -> (Vec<f64>, [usize; 3]) {
    let m = kernel.len();
    let mut cur = data.to_vec();
    let mut d = dims;
    for axis in 0..3 {
        let mut nd = d;
        nd[axis] = d[axis] + 1 - m;
        let mut next = vec![0.0; nd[0] * nd[1] * nd[2]];
        let stride = [1, d[0], d[0] * d[1]][axis];
        for z in 0..nd[2] {
            for y in 0..nd[1] {
                for x in 0..nd[0] {
                    let src = x + d[0] * (y + d[1] * z);
                    next[x + nd[0] * (y + nd[1] * z)] = kernel.iter().enumerate().map(|(t, w)| w * cur[src + t * stride]).sum();
                }
            }
        }
        cur = next;
        d = nd;
    }
    (cur, d)
}

/// Mean SSIM over all positions where the Gaussian window fits.
pub fn ssim(image: &Volume3D, reference: &Volume3D) -> f64 {
    let dims = reference.dims();
    let size = SSIM_WINDOW.min(dims.iter().map(|d| if d % 2 == 0 { d - 1 } else { *d }).min().unwrap_or(1));
    let kernel = gaussian_kernel(size, SSIM_SIGMA);
    let l = reference.voxels.iter().cloned().fold(0.0, f64::max);
    let l = if l > 0.0 { l } else { 1.0 };
    let (c1, c2) = ((0.01 * l).powi(2), (0.03 * l).powi(2));
    let a = &image.voxels;
    let b = &reference.voxels;
    let prod = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(x, y)| x * y).collect::<Vec<_>>();
    let (mu_a, _) = filter_valid(a, dims, &kernel);
    let (mu_b, _) = filter_valid(b, dims, &kernel);
    let (aa, _) = filter_valid(&prod(a, a), dims, &kernel);
    let (bb, _) = filter_valid(&prod(b, b), dims, &kernel);
    let (ab, _) = filter_valid(&prod(a, b), dims, &kernel);
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    total / n as f64
}

/// Variance of the 6-neighbour Laplacian over interior voxels.
pub fn variance_of_laplacian(v: &Volume3D) -> f64 {
    let [nx, ny, nz] = v.dims();
    if nx < 3 || ny < 3 || nz < 3 {
        return 0.0;
    }
    let mut vals = Vec::with_capacity((nx - 2) * (ny - 2) * (nz - 2));
    for z in 1..nz - 1 {
        for y in 1..ny - 1 {
            for x in 1..nx - 1 {
                let c = v.get(x, y, z);
                vals.push(
                    v.get(x - 1, y, z) + v.get(x + 1, y, z) + v.get(x, y - 1, z) + v.get(x, y + 1, z)
                        + v.get(x, y, z - 1)
                        + v.get(x, y, z + 1)
                        - 6.0 * c,
                );
            }
        }
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
}

fn bin_index(v: f64, lo: f64, hi: f64, bins: usize) -> usize {
    if hi <= lo {
        return 0;
    }
    (((v - lo) / (hi - lo) * bins as f64) as usize).min(bins - 1)
}

/// `(H(A) + H(B)) / H(A, B)` from a `bins × bins` joint histogram; 2 for identical images.
pub fn normalized_mutual_information(a: &Volume3D, b: &Volume3D, bins: usize) -> f64 {
    let range = |v: &[f64]| v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(*x), hi.max(*x)));
    let (alo, ahi) = range(&a.voxels);
    let (blo, bhi) = range(&b.voxels);
    let mut joint = vec![0.0; bins * bins];
    for (x, y) in a.voxels.iter().zip(&b.voxels) {
        joint[bin_index(*x, alo, ahi, bins) * bins + bin_index(*y, blo, bhi, bins)] += 1.0;
    }
    let n = a.voxels.len() as f64;
    let entropy = |p: &mut dyn Iterator<Item = f64>| -> f64 {
        p.filter(|c| *c > 0.0).map(|c| {
            let q = c / n;
            -q * q.ln()
        }).sum()
    };
    let ha = entropy(&mut (0..bins).map(|i| joint[i * bins..(i + 1) * bins].iter().sum::<f64>()));
    let hb = entropy(&mut (0..bins).map(|j| (0..bins).map(|i| joint[i * bins + j]).sum::<f64>()));
    let hab = entropy(&mut joint.iter().cloned());
    if hab > 0.0 { (ha + hb) / hab } else { 2.0 }
}

/// `‖a − b‖ / ‖b‖`.
pub fn nrmse(a: &Volume3D, b: &Volume3D) -> f64 {
    let num: f64 = a.voxels.iter().zip(&b.voxels).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.voxels.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

/// Seeded per-shot rigid motions: shot 0 at identity, others with rotation angle
/// up to `max_rot_deg` about a random axis and translation uniform in `±max_trans_mm`.
pub fn random_shot_motions(shots: usize, max_rot_deg: f64, max_trans_mm: f64, seed: u64) -> Vec<RigidMotion> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..shots)
        .map(|i| {
            if i == 0 {
                return RigidMotion::identity();
            }
            let axis = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let angle = rng.random_range(-max_rot_deg..=max_rot_deg).to_radians();
            let r = exp_so3(&(axis.normalize() * angle));
            let t = Vec3::new(
                rng.random_range(-max_trans_mm..=max_trans_mm),
                rng.random_range(-max_trans_mm..=max_trans_mm),
                rng.random_range(-max_trans_mm..=max_trans_mm),
            );
            RigidMotion::new(r, t)
        })
        .collect()
}

/// Acquires every shot of `trajectory` under its motion.
pub fn acquire_with_motion(phantom: &Phantom, trajectory: &[Vec<Vec3>], motions: &[RigidMotion]) -> Result<Vec<KSpaceShot>> {
    if trajectory.len() != motions.len() {
        return Err(Error::MisalignedStreams(trajectory.len(), motions.len()));
    }
    Ok(trajectory
        .iter()
        .zip(motions)
        .enumerate()
        .map(|(i, (k, m))| corrupt_shot(phantom, k, m, i))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rustfft::FftPlanner;

    fn small_phantom() -> (AcquisitionSpec, Phantom) {
        let spec = AcquisitionSpec::cartesian([16, 16, 16], [64.0; 3], 4).unwrap();
        let p = EllipsoidPhantom { edge_voxels: 1.0, ..Default::default() }.rasterize(&spec, &RigidMotion::identity()).unwrap();
        (spec, p)
    }

    #[test]
    fn spec_validation() {
        assert!(AcquisitionSpec::radial(24, 96.0, 4, 10).is_err());
        assert!(AcquisitionSpec::radial(256, 96.0, 4, 10).is_err());
        assert!(AcquisitionSpec::radial(32, 96.0, 0, 10).is_err());
        assert!(AcquisitionSpec::cartesian([16, 16, 16], [64.0; 3], 3).is_err());
        let s = AcquisitionSpec::radial(32, 96.0, 8, 100).unwrap();
        assert_eq!(s.samples_per_shot, 3300);
        assert!((s.nyquist()[0] - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn dc_is_total_mass() {
        let (_, p) = small_phantom();
        let s = acquire(&p, &[Vec3::zeros()]).unwrap();
        let mass: f64 = p.volume.voxels.iter().sum();
        assert!((s[0].re - mass).abs() < 1e-10 * mass && s[0].im.abs() < 1e-10 * mass);
    }

    #[test]
    fn cartesian_matches_fft() {
        let (spec, p) = small_phantom();
        let k: Vec<Vec3> = make_trajectory(&spec).unwrap().concat();
        let s = acquire(&p, &k).unwrap();
        // FFT oracle: s(m/FOV) = (−1)^(mx+my+mz)·FFT(ρ)[m mod n]
        let n = 16usize;
        let mut data: Vec<Complex64> = p.volume.voxels.iter().map(|v| Complex64::new(*v, 0.0)).collect();
        let fft = FftPlanner::new().plan_fft_forward(n);
        for axis in 0..3 {
            let stride = [1, n, n * n][axis];
            let mut line = vec![Complex64::default(); n];
            for base in 0..n * n * n {
                if (base / stride) % n != 0 {
                    continue;
                }
                for i in 0..n {
                    line[i] = data[base + i * stride];
                }
                fft.process(&mut line);
                for i in 0..n {
                    data[base + i * stride] = line[i];
                }
            }
        }
        let scale = s.iter().map(|c| c.norm()).fold(0.0, f64::max);
        for (kv, sv) in k.iter().zip(&s) {
            let m = kv.map(|c| (c * 64.0).round() as i64);
            let idx = |c: i64| c.rem_euclid(n as i64) as usize;
            let sign = if (m.x + m.y + m.z).rem_euclid(2) == 0 { 1.0 } else { -1.0 };
            let want = data[idx(m.x) + n * (idx(m.y) + n * idx(m.z))] * sign;
            assert!((sv - want).norm() < 1e-9 * scale);
        }
    }

    #[test]
    fn hermitian_and_linear() {
        let (spec, p) = small_phantom();
        let k = make_trajectory(&spec).unwrap()[1].clone();
        let neg: Vec<Vec3> = k.iter().map(|v| -v).filter(|v| within_nyquist(v, &spec.nyquist())).collect();
        let pos: Vec<Vec3> = neg.iter().map(|v| -v).collect();
        let a = acquire(&p, &pos).unwrap();
        let b = acquire(&p, &neg).unwrap();
        let scale = a.iter().map(|c| c.norm()).fold(0.0, f64::max);
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y.conj()).norm() < 1e-10 * scale));

        let q = EllipsoidPhantom { extent: 0.3, ..Default::default() }.rasterize(&spec, &RigidMotion::identity()).unwrap();
        let mix = Phantom::new(Volume3D {
            voxels: p.volume.voxels.iter().zip(&q.volume.voxels).map(|(x, y)| 2.0 * x + 0.5 * y).collect(),
            ..p.volume.clone()
        })
        .unwrap();
        let sp = acquire(&p, &pos).unwrap();
        let sq = acquire(&q, &pos).unwrap();
        let sm = acquire(&mix, &pos).unwrap();
        assert!(sm.iter().zip(sp.iter().zip(&sq)).all(|(m, (x, y))| (m - (x * 2.0 + y * 0.5)).norm() < 1e-10 * scale * 3.0));
    }

    #[test]
    fn beyond_nyquist_rejected() {
        let (_, p) = small_phantom();
        assert!(matches!(acquire(&p, &[Vec3::new(1.0, 0.0, 0.0)]), Err(Error::BeyondNyquist { .. })));
    }

    #[test]
    fn phantom_invariants() {
        let (spec, p) = small_phantom();
        assert!(p.volume.voxels.iter().all(|v| *v >= 0.0));
        let big = EllipsoidPhantom { extent: 1.1, ..Default::default() };
        assert!(big.rasterize(&spec, &RigidMotion::identity()).is_err());
    }

    #[test]
    fn radial_trajectory_shape() {
        let spec = AcquisitionSpec::radial(16, 64.0, 4, 20).unwrap();
        let t = make_trajectory(&spec).unwrap();
        assert_eq!(t.len(), 4);
        for shot in &t {
            assert_eq!(shot.len(), spec.samples_per_shot);
            for spoke in shot.chunks(17) {
                assert!(spoke[8].norm() < 1e-15);
                assert!(spoke.iter().all(|k| within_nyquist(k, &spec.nyquist())));
            }
        }
    }

    #[test]
    fn spoke_dispersion_near_uniform() {
        let dirs = spoke_directions(448);
        let nn: Vec<f64> = dirs
            .iter()
            .enumerate()
            .map(|(i, a)| {
                dirs.iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, b)| a.dot(b).abs().min(1.0).acos())
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        // hexagonal packing spacing for 448 points on a hemisphere
        let uniform = (2.0 * (2.0 * PI / 448.0) / 3f64.sqrt()).sqrt();
        let max = nn.iter().cloned().fold(0.0, f64::max);
        assert!(max < 2.0 * uniform, "{max} vs {uniform}");
    }

    #[test]
    fn cartesian_lines_once() {
        let spec = AcquisitionSpec::cartesian([16, 16, 16], [64.0; 3], 8).unwrap();
        let mut all: Vec<(i64, i64, i64)> = make_trajectory(&spec)
            .unwrap()
            .concat()
            .iter()
            .map(|k| ((k.x * 64.0).round() as i64, (k.y * 64.0).round() as i64, (k.z * 64.0).round() as i64))
            .collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 16 * 16 * 16);
    }

    #[test]
    fn motion_examples() {
        let (spec, p) = small_phantom();
        let k = make_trajectory(&spec).unwrap()[2].clone();
        let clean = acquire(&p, &k).unwrap();
        let same = corrupt_shot(&p, &k, &RigidMotion::identity(), 0);
        assert_eq!(same.samples, clean);

        let m = RigidMotion::new(Rot3::identity(), Vec3::new(3.0, -2.0, 1.5));
        let moved = corrupt_shot(&p, &k, &m, 0);
        assert!(moved.samples.iter().zip(&clean).all(|(a, b)| (a.norm() - b.norm()).abs() < 1e-10 * b.norm().max(1.0)));
        let back = correct_shot(&moved, &m);
        assert!(back.samples.iter().zip(&clean).all(|(a, b)| (a - b).norm() < 1e-10 * b.norm().max(1.0)));

        let r = exp_so3(&Vec3::new(0.0, 0.0, 0.1));
        let rot = corrupt_shot(&p, &k, &RigidMotion::new(r, Vec3::zeros()), 0);
        let kept_rt: Vec<Vec3> = rot.k_coords.iter().map(|v| r.transpose() * *v).collect();
        let oracle = acquire(&p, &kept_rt).unwrap();
        assert!(rot.samples.iter().zip(&oracle).all(|(a, b)| (a - b).norm() < 1e-9 * b.norm().max(1.0)));
        assert!(rot.excluded > 0);
        assert_eq!(rot.excluded + rot.len(), k.len());

        let id = correct_shot(&moved, &RigidMotion::identity());
        assert_eq!(id.samples, moved.samples);
        assert_eq!(id.k_coords, moved.k_coords);
    }

    #[test]
    fn cartesian_recon_inverts() {
        let (spec, p) = small_phantom();
        let traj = make_trajectory(&spec).unwrap();
        let shots = acquire_with_motion(&p, &traj, &vec![RigidMotion::identity(); traj.len()]).unwrap();
        let img = reconstruct(&shots, &spec).unwrap();
        let max = p.volume.voxels.iter().cloned().fold(0.0, f64::max);
        assert!(img.voxels.iter().zip(&p.volume.voxels).all(|(a, b)| (a - b).abs() < 1e-9 * max));
        // Parseval
        let e_img: f64 = p.volume.voxels.iter().map(|v| v * v).sum();
        let e_k: f64 = shots.iter().flat_map(|s| s.samples.iter()).map(|c| c.norm_sqr()).sum::<f64>() / 4096.0;
        assert!((e_img - e_k).abs() < 1e-9 * e_img);
    }

    #[test]
    fn empty_samples_give_zero_volume() {
        let (spec, _) = small_phantom();
        let shot = KSpaceShot { shot_index: 0, k_coords: vec![], samples: vec![], motion: RigidMotion::identity(), excluded: 0 };
        let v = reconstruct(&[shot], &spec).unwrap();
        assert!(v.voxels.iter().all(|x| *x == 0.0));
        assert!(reconstruct(&[], &spec).is_err());
    }

    #[test]
    fn metrics_examples() {
        let (_, p) = small_phantom();
        let m = score(&p.volume, &p.volume).unwrap();
        assert!((m.ssim - 1.0).abs() < 1e-12 && (m.nvol - 1.0).abs() < 1e-12 && (m.nmi - 2.0).abs() < 1e-12);
        // blur with a 3-tap box along each axis
        let v = &p.volume;
        let blurred = Volume3D::from_fn(v.dims(), v.spacing, |x, y, z| {
            let mut s = 0.0;
            for (dx, dy, dz) in [(0i64, 0i64, 0i64), (1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)] {
                let c = |a: usize, d: i64, n: usize| (a as i64 + d).clamp(0, n as i64 - 1) as usize;
                s += v.get(c(x, dx, v.nx), c(y, dy, v.ny), c(z, dz, v.nz));
            }
            s / 7.0
        })
        .unwrap();
        let m = score(&blurred, &p.volume).unwrap();
        assert!(m.ssim < 1.0 && m.nvol < 1.0 && m.nmi < 2.0, "{m:?}");
        assert!(score(&p.volume, &grid_volume([8, 8, 8], [1.0; 3])).is_err());
    }

    #[test]
    fn shot_translation_needs_two_shots() {
        let (spec, p) = small_phantom();
        let k = make_trajectory(&spec).unwrap();
        let s = corrupt_shot(&p, &k[0], &RigidMotion::identity(), 0);
        assert!(estimate_shot_translations(&[s], &[Rot3::identity()], &spec).is_err());
    }
}
