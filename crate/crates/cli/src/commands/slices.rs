//! Slice-stack alignment against a reference volume.

use std::path::PathBuf;

use clap::Args;
use moco_core::io;
use moco_core::phase_correlation::{localize_stack, rebuild_volume, CorrelationOptions, SliceToVolumeOptions};
use serde_json::json;

use super::require_file;
use crate::error::{invalid, CliResult};
use crate::jsonl::num;

pub const SHIFT_HEADER: [&str; 5] = ["slice", "dx", "dy", "zr", "confidence"];

#[derive(Debug, Args)]
pub struct CorrectSlicesArgs {
    /// reference volume
    #[arg(long)]
    pub volume: PathBuf,
    /// slice stack, one displaced slice per z layer
    #[arg(long)]
    pub slices: PathBuf,
    /// refined z grid is this many times finer than the reference
    #[arg(long, default_value_t = 10)]
    pub refine: usize,
    /// refinement half width, fine-grid steps
    #[arg(long, default_value_t = 5)]
    pub window: usize,
    /// normalize the cross-power spectrum
    #[arg(long)]
    pub whiten: bool,
    /// aligned volume output
    #[arg(long, default_value = "aligned.vol")]
    pub out: PathBuf,
    /// per-slice shift CSV output
    #[arg(long, default_value = "shifts.csv")]
    pub shifts: PathBuf,
}

pub fn run(args: &CorrectSlicesArgs) -> CliResult<()> {
    require_file(&args.volume)?;
    require_file(&args.slices)?;
    let reference = io::read_volume(&args.volume)?;
    let stack = io::read_volume(&args.slices)?;
    if (stack.nx, stack.ny) != (reference.nx, reference.ny) {
        return Err(invalid(format!(
            "slices are {}×{}, reference {}×{}",
            stack.nx, stack.ny, reference.nx, reference.ny
        )));
    }
    let opts = SliceToVolumeOptions {
        refine_factor: args.refine,
        window: args.window,
        correlation: CorrelationOptions { whiten: args.whiten, ..Default::default() },
        ..Default::default()
    };
    let found = localize_stack(&io::slices_of(&stack), &reference, &opts, true)?;
    io::write_table(
        &args.shifts,
        &SHIFT_HEADER,
        found.iter().enumerate().map(|(k, r)| vec![k as f64, r.estimate.dx, r.estimate.dy, r.z_r, r.estimate.confidence]),
    )?;
    let ambiguous = found.iter().filter(|r| r.estimate.ambiguous).count();
    let placed: Vec<_> = found.into_iter().map(|r| (r.aligned, r.z_r)).collect();
    let rebuilt = rebuild_volume(&placed, &reference)?;
    io::write_volume(&args.out, &rebuilt.volume)?;
    println!(
        "{}",
        json!({
            "kind": "slices",
            "slices": placed.len(),
            "ambiguous": ambiguous,
            "collisions": rebuilt.collisions,
            "filled_from_reference": rebuilt.filled_from_reference.len(),
            "slice_spacing_mm": num(reference.slice_spacing()),
        })
    );
    Ok(())
}
