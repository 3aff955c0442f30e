pub mod analysis;
pub mod net;
pub mod plot;
pub mod radial;
pub mod sensors;
pub mod simulate;
pub mod slices;

use std::path::Path;

use clap::Args;
use moco_core::sensor_sim::FieldSpec;

use crate::error::{invalid, CliResult};

/// Reference field magnitudes shared by every sensor-facing subcommand.
#[derive(Debug, Clone, Copy, Args)]
pub struct FieldArgs {
    /// gravity magnitude, m/s²
    #[arg(long, default_value_t = 9.81)]
    pub g: f64,
    /// static field magnitude, T
    #[arg(long, default_value_t = 3.0)]
    pub b0: f64,
}

impl FieldArgs {
    pub fn spec(&self) -> CliResult<FieldSpec> {
        Ok(FieldSpec::new(self.g, self.b0)?)
    }
}

pub fn require_file(path: &Path) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(invalid(format!("input file not found: {}", path.display())))
    }
}

pub fn ensure_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path)?;
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text)?;
    Ok(())
}

pub fn positive(name: &str, v: f64) -> CliResult<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("--{name} must be positive, got {v}")))
    }
}
