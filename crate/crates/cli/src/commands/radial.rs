//! Retrospective radial correction from compass-derived rotations.

use std::path::PathBuf;

use clap::Args;
use moco_core::error_analysis::residual_error;
use moco_core::geometry::{exp_so3, log_so3, Rot3};
use moco_core::io;
use moco_core::kspace::{correct_retrospectively, reconstruct, score, ImageMetrics};
use moco_core::Vec3;
use serde_json::{json, Value};

use super::{ensure_dir, positive, require_file};
use crate::error::{invalid, CliResult};
use crate::jsonl::{self, num};

/// Portion of each shot averaged for its rotation, clear of the transition.
const SHOT_WINDOW: (f64, f64) = (0.25, 0.75);

#[derive(Debug, Args)]
pub struct CorrectRadialArgs {
    /// shot file
    #[arg(long)]
    pub shots: PathBuf,
    /// orientation CSV from `estimate` or `replay`
    #[arg(long)]
    pub orientation: PathBuf,
    /// shot duration, s; shot i spans [i·d, (i+1)·d) on the orientation clock
    #[arg(long, default_value_t = 0.5)]
    pub shot_duration: f64,
    /// motion-free reconstruction to score against
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// planted per-shot motion, for residual errors
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// output directory
    #[arg(long, default_value = "radial")]
    pub out: PathBuf,
}

/// Mean rotation of the orientation samples inside each shot's window.
pub fn shot_rotations(trace: &[(f64, Rot3)], shots: usize, shot_duration: f64) -> CliResult<Vec<Rot3>> {
    (0..shots)
        .map(|i| {
            let t0 = (i as f64 + SHOT_WINDOW.0) * shot_duration;
            let t1 = (i as f64 + SHOT_WINDOW.1) * shot_duration;
            let inside: Vec<&Rot3> = trace.iter().filter(|(t, _)| (t0..=t1).contains(t)).map(|(_, r)| r).collect();
            let Some(anchor) = inside.first() else {
                return Err(invalid(format!("no orientation samples in shot {i} ({t0:.3} s to {t1:.3} s)")));
            };
            let mean = inside.iter().map(|r| log_so3(&(anchor.transpose() * **r))).sum::<Vec3>() / inside.len() as f64;
            Ok(**anchor * exp_so3(&mean))
        })
        .collect()
}

fn metrics_record(name: &str, m: &ImageMetrics) -> Value {
    json!({ "kind": "image", "name": name, "ssim": num(m.ssim), "nvol": num(m.nvol), "nmi": num(m.nmi) })
}

pub fn run(args: &CorrectRadialArgs) -> CliResult<()> {
    positive("shot-duration", args.shot_duration)?;
    require_file(&args.shots)?;
    require_file(&args.orientation)?;
    let (spec, shots) = io::read_shots(&args.shots)?;
    let trace = io::read_orientation_csv(&args.orientation)?;
    let rotations = shot_rotations(&trace, shots.len(), args.shot_duration)?;
    let truth = match &args.truth {
        Some(p) => {
            require_file(p)?;
            let t = io::read_motion_csv(p)?;
            if t.len() != shots.len() {
                return Err(invalid(format!("{} has {} shots, the shot file {}", p.display(), t.len(), shots.len())));
            }
            Some(t)
        }
        None => None,
    };
    let reference = match &args.reference {
        Some(p) => {
            require_file(p)?;
            Some(io::read_volume(p)?)
        }
        None => None,
    };
    ensure_dir(&args.out)?;

    let fixed = correct_retrospectively(&shots, &rotations, &spec)?;
    let uncorrected = reconstruct(&shots, &spec)?;
    let corrected = reconstruct(&fixed.corrected, &spec)?;
    io::write_volume(&args.out.join("uncorrected.vol"), &uncorrected)?;
    io::write_volume(&args.out.join("corrected.vol"), &corrected)?;
    io::write_motion_csv(&args.out.join("motion_estimate.csv"), &fixed.motions)?;

    let pixel = spec.voxel_size()[0];
    let mut records = Vec::new();
    let mut errors = Vec::new();
    for (i, m) in fixed.motions.iter().enumerate() {
        let w = log_so3(&m.rotation).map(f64::to_degrees);
        let t = m.translation;
        let mut r = json!({
            "kind": "shot",
            "shot": i,
            "rotation_deg": [num(w.x), num(w.y), num(w.z)],
            "translation_mm": [num(t.x), num(t.y), num(t.z)],
        });
        if let Some(truth) = &truth {
            let e = residual_error(m, &truth[i], Some(pixel));
            r["eps_rotation_deg"] = num(e.eps_rotation);
            r["eps_translation_px"] = num(e.eps_translation);
            errors.push(e);
        }
        records.push(r);
    }
    let mut summary = json!({ "kind": "summary", "shots": shots.len(), "pixel_mm": num(pixel) });
    if let Some(reference) = &reference {
        let before = score(&uncorrected, reference)?;
        let after = score(&corrected, reference)?;
        records.push(metrics_record("uncorrected", &before));
        records.push(metrics_record("corrected", &after));
        summary["ssim_uncorrected"] = num(before.ssim);
        summary["ssim_corrected"] = num(after.ssim);
    }
    if !errors.is_empty() {
        // shot 0 is the reference pose and carries no estimation error
        let moved = &errors[1..];
        let n = moved.len().max(1) as f64;
        summary["mean_eps_translation_px"] = num(moved.iter().map(|e| e.eps_translation).sum::<f64>() / n);
        summary["mean_eps_rotation_deg"] = num(moved.iter().map(|e| e.eps_rotation).sum::<f64>() / n);
    }
    records.push(summary.clone());
    jsonl::write(&args.out.join("metrics.jsonl"), &records)?;
    println!("{summary}");
    Ok(())
}
