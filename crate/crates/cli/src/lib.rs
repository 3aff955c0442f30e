//! Command-line front end: every pipeline as a subcommand.
//!
//! [`run`] maps an argument vector to an exit code: 0 on success, 1 on invalid
//! input or usage, 2 on runtime failure. File formats are described in FORMATS.md.

pub mod commands;
pub mod error;
pub mod jsonl;
pub mod svg;

use std::ffi::OsString;

use clap::{Parser, Subcommand};

use commands::{analysis, net, plot, radial, sensors, simulate, slices};
pub use error::{CliError, CliResult};

const AFTER_HELP: &str = "\
Exit status: 0 success, 1 invalid input or usage, 2 runtime failure.
Rotations in CSV files are axis-angle vectors in degrees; translations in mm.
Set RUST_LOG=info for progress messages and MOCO_BUFFER_CAP to size the server's output buffer.";

#[derive(Debug, Parser)]
#[command(name = "moco", version, about = "Compass orientation, phase correlation and k-space motion correction", after_help = AFTER_HELP)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a motion-corrupted radial acquisition, its sensor logs and a displaced slice stack
    Simulate(simulate::SimulateArgs),
    /// Fit the sensor misalignment model from a log of stationary orientations
    Calibrate(sensors::CalibrateArgs),
    /// Turn a sensor log into a normalized orientation trace
    Estimate(sensors::EstimateArgs),
    /// Align a slice stack to a reference volume and rebuild it
    CorrectSlices(slices::CorrectSlicesArgs),
    /// Correct radial shots with measured rotations and estimated translations, then score
    CorrectRadial(radial::CorrectRadialArgs),
    /// Print the orientation error budget and optionally sweep noise levels
    AnalyzeError(analysis::AnalyzeErrorArgs),
    /// Compare gyro-integration drift with compass error over time
    DriftDemo(analysis::DriftDemoArgs),
    /// Serve orientation estimates over TCP
    Serve(net::ServeArgs),
    /// Stream a sensor log to a server at a fixed rate
    Replay(net::ReplayArgs),
    /// Plot CSV columns as SVG
    Plot(plot::PlotArgs),
}

pub fn dispatch(command: &Command) -> CliResult<()> {
    match command {
        Command::Simulate(a) => simulate::run(a),
        Command::Calibrate(a) => sensors::run_calibrate(a),
        Command::Estimate(a) => sensors::run_estimate(a),
        Command::CorrectSlices(a) => slices::run(a),
        Command::CorrectRadial(a) => radial::run(a),
        Command::AnalyzeError(a) => analysis::run_analyze_error(a),
        Command::DriftDemo(a) => analysis::run_drift_demo(a),
        Command::Serve(a) => net::run_serve(a),
        Command::Replay(a) => net::run_replay(a),
        Command::Plot(a) => plot::run(a),
    }
}

/// Parses `argv` (program name first) and runs the subcommand.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
