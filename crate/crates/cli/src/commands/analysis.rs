//! Error-budget table and the gyro-versus-compass drift experiment.

use std::path::PathBuf;

use clap::Args;
use moco_core::calibration::snr_gain_db;
use moco_core::drift::{fit_power_law, run_drift, DriftConfig};
use moco_core::error_analysis::{
    expected_error_norm, expected_error_norm_closed_form, expected_error_norm_monte_carlo, kinematic_spike_error,
    perturbation_angles,
};
use moco_core::geometry::Rot3;
use moco_core::io;
use moco_core::sensor_sim::NoiseSpec;
use moco_core::Vec3;
use serde_json::json;

use super::{positive, write_text, FieldArgs};
use crate::error::{invalid, CliResult};
use crate::jsonl::num;
use crate::svg::{render, Plot, Series};

#[derive(Debug, Args)]
pub struct AnalyzeErrorArgs {
    /// accelerometer noise per axis, m/s²
    #[arg(long, default_value_t = 0.05)]
    pub sigma_a: f64,
    /// magnetometer noise per axis, T
    #[arg(long, default_value_t = 0.0012)]
    pub sigma_b: f64,
    /// worked-example accelerometer perturbation per axis, g
    #[arg(long, default_value_t = 0.01)]
    pub delta_a: f64,
    /// kinematic acceleration spike, g
    #[arg(long, default_value_t = 0.06)]
    pub spike: f64,
    /// samples averaged in the SNR line
    #[arg(long, default_value_t = 3000)]
    pub averaged: u64,
    /// Monte Carlo draws per noise level
    #[arg(long, default_value_t = 10_000)]
    pub draws: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// CSV of analytic versus Monte Carlo error across noise levels
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// SVG of the same sweep with Monte Carlo error bars
    #[arg(long)]
    pub plot: Option<PathBuf>,
    #[command(flatten)]
    pub fields: FieldArgs,
}

pub const SWEEP_HEADER: [&str; 6] = ["scale", "sigma_a", "sigma_b", "analytic_deg", "monte_carlo_deg", "monte_carlo_std_deg"];
const SWEEP_SCALES: [f64; 7] = [0.25, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0];
const SWEEP_BATCHES: u64 = 8;

pub fn run_analyze_error(args: &AnalyzeErrorArgs) -> CliResult<()> {
    if args.draws == 0 {
        return Err(invalid("--draws must be positive"));
    }
    let f = args.fields.spec()?;
    let id = Rot3::identity();
    let closed = expected_error_norm(args.sigma_a, args.sigma_b, &f, &id)?;
    let mc = expected_error_norm_monte_carlo(args.sigma_a, args.sigma_b, &f, &id, args.draws, args.seed).to_degrees();
    let da = Vec3::new(1.0, 1.0, 1.0) * args.delta_a * f.g;
    let db = Vec3::new(0.0, args.sigma_b, args.sigma_b);
    let [alpha, beta, gamma, norm] = perturbation_angles(&id, &da, &db, &f).to_degrees();
    let spike = kinematic_spike_error(args.delta_a, args.spike, args.sigma_b, &f)?;
    let snr = snr_gain_db(args.averaged)?;

    let rows: [(String, String, &str); 8] = [
        ("expected error norm, closed form".into(), format!("{closed:.3}°"), "0.41°"),
        (format!("expected error norm, Monte Carlo ({} draws)", args.draws), format!("{mc:.3}°"), "0.41°"),
        ("worked example α".into(), format!("{alpha:.3}°"), "-0.57°"),
        ("worked example β".into(), format!("{beta:.3}°"), "0.57°"),
        ("worked example γ".into(), format!("{gamma:.3}°"), "0.02°"),
        ("worked example ‖ε‖".into(), format!("{norm:.3}°"), "0.8°"),
        (format!("with {} g kinematic spike ‖ε‖", args.spike), format!("{spike:.3}°"), "3.5°"),
        (format!("SNR gain, {} samples averaged", args.averaged), format!("{snr:.2} dB"), "17.4 dB"),
    ];
    println!("{:<48} {:>10} {:>10}", "quantity", "value", "expected");
    for (q, v, e) in &rows {
        println!("{:<48} {:>10} {:>10}", q, v, e);
    }

    if args.csv.is_some() || args.plot.is_some() {
        let mut sweep = Vec::with_capacity(SWEEP_SCALES.len());
        for s in SWEEP_SCALES {
            let (sa, sb) = (args.sigma_a * s, args.sigma_b * s);
            let analytic = expected_error_norm_closed_form(sa, sb, &f).to_degrees();
            let per_batch = (args.draws as u64 / SWEEP_BATCHES).max(1) as usize;
            let batches: Vec<f64> = (0..SWEEP_BATCHES)
                .map(|b| expected_error_norm_monte_carlo(sa, sb, &f, &id, per_batch, args.seed.wrapping_add(b)).to_degrees())
                .collect();
            let mean = batches.iter().sum::<f64>() / batches.len() as f64;
            let std = (batches.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (batches.len() - 1) as f64).sqrt();
            sweep.push(vec![s, sa, sb, analytic, mean, std]);
        }
        if let Some(p) = &args.csv {
            io::write_table(p, &SWEEP_HEADER, sweep.clone())?;
        }
        if let Some(p) = &args.plot {
            let col = |j: usize| sweep.iter().map(|r| r[j]).collect::<Vec<f64>>();
            let plot = Plot {
                title: "compass error versus sensor noise".into(),
                x_label: "noise scale".into(),
                y_label: "angular error (deg)".into(),
                series: vec![
                    Series { label: "analytic".into(), x: col(0), y: col(3), err: None },
                    Series { label: "Monte Carlo".into(), x: col(0), y: col(4), err: Some(col(5)) },
                ],
            };
            write_text(p, &render(&plot))?;
        }
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct DriftDemoArgs {
    /// simulated time, s
    #[arg(long, default_value_t = 300.0)]
    pub duration: f64,
    /// orientation rate, Hz
    #[arg(long, default_value_t = 200.0)]
    pub rate: f64,
    /// independent noise seeds averaged
    #[arg(long, default_value_t = 50)]
    pub seeds: usize,
    /// nodding amplitude, degrees
    #[arg(long, default_value_t = 3.0)]
    pub nod_deg: f64,
    /// nodding frequency, Hz
    #[arg(long, default_value_t = 0.05)]
    pub nod_hz: f64,
    /// gyro noise per axis, rad/s
    #[arg(long, default_value_t = moco_core::sensor_sim::DEFAULT_SIGMA_GYRO)]
    pub sigma_gyro: f64,
    /// error series CSV output (t,gyro_deg,compass_deg)
    #[arg(long, default_value = "drift.csv")]
    pub out: PathBuf,
    /// optional SVG of both error series
    #[arg(long)]
    pub plot: Option<PathBuf>,
    #[command(flatten)]
    pub fields: FieldArgs,
}

pub const DRIFT_HEADER: [&str; 3] = ["t", "gyro_deg", "compass_deg"];
/// start of the power-law fit, s
const FIT_FROM: f64 = 1.0;

pub fn run_drift_demo(args: &DriftDemoArgs) -> CliResult<()> {
    positive("duration", args.duration)?;
    positive("rate", args.rate)?;
    if args.seeds == 0 {
        return Err(invalid("--seeds must be positive"));
    }
    if args.duration <= 4.0 * FIT_FROM {
        return Err(invalid(format!("--duration must exceed {} s for the growth fit", 4.0 * FIT_FROM)));
    }
    let cfg = DriftConfig {
        duration: args.duration,
        rate: args.rate,
        noise: NoiseSpec { sigma_gyro: args.sigma_gyro, ..NoiseSpec::default() },
        fields: args.fields.spec()?,
        nod_deg: args.nod_deg,
        nod_hz: args.nod_hz,
    };
    let s = run_drift(&cfg, args.seeds)?;
    io::write_table(
        &args.out,
        &DRIFT_HEADER,
        s.t.iter().zip(&s.gyro_deg).zip(&s.compass_deg).map(|((t, g), c)| vec![*t, *g, *c]),
    )?;
    if let Some(p) = &args.plot {
        let plot = Plot {
            title: format!("orientation error, mean of {} seeds", args.seeds),
            x_label: "time (s)".into(),
            y_label: "angular error (deg)".into(),
            series: vec![
                Series { label: "gyro integration".into(), x: s.t.clone(), y: s.gyro_deg.clone(), err: None },
                Series { label: "compass".into(), x: s.t.clone(), y: s.compass_deg.clone(), err: None },
            ],
        };
        write_text(p, &render(&plot))?;
    }
    let budget = expected_error_norm(cfg.noise.sigma_accel, cfg.noise.sigma_mag, &cfg.fields, &Rot3::identity())?;
    let (pc, _) = fit_power_law(&s.t, &s.compass_deg, FIT_FROM)?;
    println!(
        "{}",
        json!({
            "kind": "drift",
            "seeds": args.seeds,
            "gyro_exponent": num(s.gyro_exponent(FIT_FROM)?),
            "compass_exponent": num(pc),
            "gyro_final_deg": num(*s.gyro_deg.last().unwrap_or(&f64::NAN)),
            "compass_max_deg": num(s.compass_max()),
            "compass_budget_deg": num(budget),
        })
    );
    Ok(())
}
