use std::net::TcpStream;
use std::io::{Read, Write};
use std::thread;
use std::time::Duration;

use moco_core::calibration::CalibrationModel;
use moco_core::drift::{nod_trace, DriftConfig};
use moco_core::sensor_sim::{simulate_trajectory, FieldSpec, NoiseSpec, SensorSample};
use moco_stream::packet::{Frame, SensorPacket};
use moco_stream::replay::{frames_from_samples, window_counts};
use moco_stream::server::{CloseReason, Stall};
use moco_stream::{offline_orientations, replay, wire_axis_angle, ReplayOptions, Server, ServerConfig, SessionReport};

fn nodding_samples(seconds: f64, noise: NoiseSpec) -> Vec<SensorSample> {
    let cfg = DriftConfig { duration: seconds, rate: 2000.0, nod_deg: 8.0, nod_hz: 0.5, ..Default::default() };
    let trace = nod_trace(&cfg).unwrap();
    simulate_trajectory(&trace, &FieldSpec::default(), &noise, 2000.0).unwrap().collect()
}

fn serve_in_background(config: ServerConfig) -> (std::net::SocketAddr, thread::JoinHandle<SessionReport>) {
    let server = Server::bind("127.0.0.1:0", config).unwrap();
    let addr = server.local_addr().unwrap();
    (addr, thread::spawn(move || server.serve_one().unwrap()))
}

fn config(cap: usize) -> ServerConfig {
    ServerConfig { buffer_cap: cap, ..ServerConfig::new(CalibrationModel::identity()) }
}

#[test]
fn online_matches_offline_bit_for_bit() {
    let samples = nodding_samples(3.0, NoiseSpec::default().with_seed(3));
    let frames = frames_from_samples(&samples);
    // the offline run sees exactly what crossed the wire
    let wire: Vec<SensorSample> = samples.iter().enumerate().map(|(i, s)| SensorPacket::from_sample(i as u32, s).to_sample()).collect();
    let offline: Vec<[f32; 3]> = offline_orientations(&wire, &CalibrationModel::identity(), &FieldSpec::default(), 10)
        .unwrap()
        .iter()
        .map(wire_axis_angle)
        .collect();

    let (addr, server) = serve_in_background(config(1 << 16));
    let report = replay(addr, &frames, &ReplayOptions { rate: 0.0, read_back: true }).unwrap();
    let session = server.join().unwrap();
    assert_eq!(session.dropped(), 0);
    let online: Vec<[f32; 3]> = report.received.iter().map(|p| p.axis_angle).collect();
    assert_eq!(online.len(), offline.len());
    for (a, b) in online.iter().zip(&offline) {
        assert_eq!(a.map(f32::to_bits), b.map(f32::to_bits));
    }
    assert!(report.received.windows(2).all(|w| w[1].t_ns > w[0].t_ns && w[1].seq == w[0].seq + 1));
}

#[test]
fn noiseless_stationary_stream_reads_zero() {
    let samples: Vec<SensorSample> = nodding_samples(0.5, NoiseSpec::noiseless())
        .into_iter()
        .map(|mut s| {
            // freeze the pose at the first sample
            s.accel = FieldSpec::default().gravity();
            s.mag = FieldSpec::default().static_field();
            s
        })
        .collect();
    let (addr, server) = serve_in_background(config(4096));
    let report = replay(addr, &frames_from_samples(&samples), &ReplayOptions { rate: 0.0, read_back: true }).unwrap();
    server.join().unwrap();
    assert_eq!(report.received.len(), 100);
    for p in &report.received {
        assert!(p.axis_angle.iter().all(|x| x.abs() < 1e-7));
    }
}

#[test]
fn one_second_at_2khz_is_paced() {
    let samples = nodding_samples(1.0, NoiseSpec::default());
    let frames = frames_from_samples(&samples[..2000]);
    let (addr, server) = serve_in_background(config(4096));
    let report = replay(addr, &frames, &ReplayOptions::default()).unwrap();
    let session = server.join().unwrap();
    assert_eq!(report.sent, 2000);
    assert_eq!(session.samples, 2000);
    assert_eq!(session.input_gaps, 0);
    assert_eq!(report.received.len(), 200);
    let mean = report.mean_interval().unwrap().as_secs_f64() * 1e6;
    assert!((mean - 500.0).abs() < 5.0, "mean interval {mean:.2} µs");
    let counts = window_counts(&report.send_offsets, Duration::from_secs(1));
    assert!((1980..=2020).contains(&counts[0]), "{counts:?}");
}

#[test]
fn soak_without_pacing_drops_nothing() {
    let base = nodding_samples(1.0, NoiseSpec::default());
    let samples: Vec<SensorSample> = (0..100_000)
        .map(|i| SensorSample { t: i as f64 * 5e-4, ..base[i % base.len()] })
        .collect();
    let (addr, server) = serve_in_background(config(4096));
    let report = replay(addr, &frames_from_samples(&samples), &ReplayOptions { rate: 0.0, read_back: true }).unwrap();
    let session = server.join().unwrap();
    assert_eq!(session.samples, 100_000);
    assert_eq!(session.malformed, 0);
    assert_eq!(session.dropped(), 0);
    assert_eq!(report.received.len(), 10_000);
}

#[test]
fn injected_stall_shows_in_p99_not_mean() {
    let samples = nodding_samples(1.0, NoiseSpec::default());
    let mut cfg = config(4096);
    cfg.stall = Some(Stall { every: 50, duration: Duration::from_millis(2) });
    let (addr, server) = serve_in_background(cfg);
    replay(addr, &frames_from_samples(&samples[..2000]), &ReplayOptions::default()).unwrap();
    let lat = server.join().unwrap().latency;
    let p99 = lat.p99_ns.unwrap() as f64;
    let mean = lat.mean_ns.unwrap();
    assert!(p99 >= 2e6, "p99 {p99} ns");
    assert!(mean < 0.5 * p99, "mean {mean} ns vs p99 {p99} ns");
}

#[test]
fn stalled_tcp_reader_stays_bounded() {
    let base = nodding_samples(1.0, NoiseSpec::default());
    let samples: Vec<SensorSample> = (0..200_000)
        .map(|i| SensorSample { t: i as f64 * 5e-4, ..base[i % base.len()] })
        .collect();
    let (addr, server) = serve_in_background(config(8));
    let report = replay(addr, &frames_from_samples(&samples), &ReplayOptions { rate: 0.0, read_back: false }).unwrap();
    let session = server.join().unwrap();
    assert!(report.received.is_empty());
    assert_eq!(session.windows, 20_000);
    assert_eq!(session.emitted + session.dropped(), session.windows);
}

#[test]
fn version_mismatch_closes_the_connection() {
    let (addr, server) = serve_in_background(config(16));
    let mut s = TcpStream::connect(addr).unwrap();
    let mut frame = Frame::Sensor(SensorPacket { seq: 0, t_ns: 0, accel: [0.0, 0.0, 9.81], mag: [3.0, 0.0, 0.0] }).encode();
    frame[2] = 7;
    let crc = crc32fast::hash(&frame[..40]);
    frame[40..].copy_from_slice(&crc.to_le_bytes());
    s.write_all(&frame).unwrap();
    let session = server.join().unwrap();
    assert_eq!(session.close, CloseReason::VersionMismatch(7));
    let mut buf = [0u8; 1];
    assert_eq!(s.read(&mut buf).unwrap_or(0), 0);
}
