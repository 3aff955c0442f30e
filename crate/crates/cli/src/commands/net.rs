//! Streaming server and paced log replay over TCP.

use std::path::PathBuf;

use clap::Args;
use moco_core::geometry::{exp_so3, Rot3};
use moco_core::io;
use moco_core::Vec3;
use moco_stream::latency::percentile;
use moco_stream::replay::frames_from_samples;
use moco_stream::server::DEFAULT_FACTOR;
use moco_stream::{replay, ReplayOptions, Server, ServerConfig, SessionReport};
use serde_json::{json, Value};

use super::sensors::{load_model, read_log};
use super::FieldArgs;
use crate::error::{invalid, CliError, CliResult};
use crate::jsonl::num;

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// address to listen on
    #[arg(long, default_value = "127.0.0.1:7878")]
    pub listen: String,
    /// calibration model; identity when omitted
    #[arg(long)]
    pub calib: Option<PathBuf>,
    /// raw samples averaged per emitted orientation
    #[arg(long, default_value_t = DEFAULT_FACTOR)]
    pub factor: usize,
    /// stop after this many sessions; 0 serves until interrupted
    #[arg(long, default_value_t = 0)]
    pub sessions: usize,
    /// output buffer cap in packets; overrides MOCO_BUFFER_CAP
    #[arg(long)]
    pub buffer_cap: Option<usize>,
    #[command(flatten)]
    pub fields: FieldArgs,
}

pub fn session_record(r: &SessionReport) -> Value {
    let l = &r.latency;
    json!({
        "kind": "session",
        "frames": r.frames,
        "samples": r.samples,
        "malformed": r.malformed,
        "input_gaps": r.input_gaps,
        "windows": r.windows,
        "rejected": r.rejected,
        "emitted": r.emitted,
        "dropped": r.dropped(),
        "rezeros": r.rezeros,
        "close": format!("{:?}", r.close),
        "latency_mean_ns": l.mean_ns.map_or(Value::Null, num),
        "latency_p99_ns": l.p99_ns,
        "throughput_hz": l.throughput_hz.map_or(Value::Null, num),
    })
}

pub fn run_serve(args: &ServeArgs) -> CliResult<()> {
    if args.factor == 0 {
        return Err(invalid("--factor must be at least 1"));
    }
    let mut config = ServerConfig::new(load_model(args.calib.as_ref())?);
    config.fields = args.fields.spec()?;
    config.factor = args.factor;
    if let Some(cap) = args.buffer_cap {
        if cap == 0 {
            return Err(invalid("--buffer-cap must be at least 1"));
        }
        config.buffer_cap = cap;
    }
    let server = Server::bind(&args.listen, config).map_err(|e| CliError::Runtime(format!("bind {}: {e}", args.listen)))?;
    eprintln!("listening on {}", server.local_addr()?);
    let limit = (args.sessions > 0).then_some(args.sessions);
    for report in server.run(limit)? {
        match report {
            Ok(r) => println!("{}", session_record(&r)),
            Err(e) => log::warn!("session failed: {e}"),
        }
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// sensor log CSV to send
    #[arg(long)]
    pub log: PathBuf,
    /// frames per second; 0 sends as fast as possible
    #[arg(long, default_value_t = 2000.0)]
    pub rate: f64,
    /// server address
    #[arg(long, default_value = "127.0.0.1:7878")]
    pub connect: String,
    /// write received orientations as CSV (t,rx,ry,rz; degrees)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run_replay(args: &ReplayArgs) -> CliResult<()> {
    if !(args.rate >= 0.0 && args.rate.is_finite()) {
        return Err(invalid(format!("--rate must be finite and non-negative, got {}", args.rate)));
    }
    let samples = read_log(&args.log)?;
    let frames = frames_from_samples(&samples);
    let report = replay(args.connect.as_str(), &frames, &ReplayOptions { rate: args.rate, read_back: true })
        .map_err(|e| CliError::Runtime(format!("replay to {}: {e}", args.connect)))?;
    if let Some(path) = &args.out {
        let rows: Vec<(f64, Rot3)> = report
            .received
            .iter()
            .map(|p| {
                let [x, y, z] = p.axis_angle.map(f64::from);
                (p.t_ns as f64 * 1e-9, exp_so3(&Vec3::new(x, y, z)))
            })
            .collect();
        io::write_orientation_csv(path, &rows)?;
    }
    let lat: Vec<u64> = report.received.iter().map(|p| p.latency_ns).collect();
    let mean = (!lat.is_empty()).then(|| lat.iter().map(|&x| x as f64).sum::<f64>() / lat.len() as f64);
    println!(
        "{}",
        json!({
            "kind": "replay",
            "sent": report.sent,
            "received": report.received.len(),
            "bad_frames": report.bad_frames,
            "elapsed_s": num(report.elapsed.as_secs_f64()),
            "mean_send_interval_us": report.mean_interval().map_or(Value::Null, |d| num(d.as_secs_f64() * 1e6)),
            "latency_mean_ns": mean.map_or(Value::Null, num),
            "latency_p99_ns": (!lat.is_empty()).then(|| percentile(&lat, 0.99)),
        })
    );
    Ok(())
}
