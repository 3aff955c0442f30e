//! Processing service: one session per connection.
//!
//! Within a session a reader loop decodes, processes and queues motion packets on
//! a bounded channel; a writer thread encodes and sends them. When the consumer
//! is slower than the producer the channel fills and further packets are dropped
//! and counted, so memory stays bounded by the channel capacity.

use std::io::{self, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{sync_channel, TrySendError};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use moco_core::calibration::CalibrationModel;
use moco_core::sensor_sim::FieldSpec;

use crate::latency::LatencyReport;
use crate::packet::{decode_inbound, ControlCommand, DecodeError, Frame, MotionPacket, INBOUND_FRAME_LEN};
use crate::pipeline::{wire_axis_angle, Processor, Step};

/// Environment override for the per-session output buffer, in packets.
pub const BUFFER_CAP_ENV: &str = "MOCO_BUFFER_CAP";
pub const DEFAULT_BUFFER_CAP: usize = 1024;
pub const DEFAULT_FACTOR: usize = 10;

/// Fault injection: sleep `duration` before queuing every `every`-th window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stall {
    pub every: u64,
    pub duration: Duration,
}

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub model: CalibrationModel,
    pub fields: FieldSpec,
    pub factor: usize,
    /// packets buffered between processing and the socket writer, at least 1
    pub buffer_cap: usize,
    pub stall: Option<Stall>,
}

impl ServerConfig {
    /// Defaults, with the buffer cap taken from [`BUFFER_CAP_ENV`] when set.
    pub fn new(model: CalibrationModel) -> Self {
        Self {
            model,
            fields: FieldSpec::default(),
            factor: DEFAULT_FACTOR,
            buffer_cap: buffer_cap_from_env().unwrap_or(DEFAULT_BUFFER_CAP),
            stall: None,
        }
    }
}

/// Parsed [`BUFFER_CAP_ENV`]; unset, unparsable or zero gives `None`.
pub fn buffer_cap_from_env() -> Option<usize> {
    let raw = std::env::var(BUFFER_CAP_ENV).ok()?;
    match raw.trim().parse::<usize>() {
        Ok(n) if n >= 1 => Some(n),
        _ => {
            log::warn!("ignoring {BUFFER_CAP_ENV}={raw:?}: expected a positive integer");
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CloseReason {
    /// peer finished sending; a trailing partial frame is discarded
    Eof,
    VersionMismatch(u8),
    ReadError(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionReport {
    pub frames: u64,
    pub samples: u64,
    /// frames skipped for bad magic, crc, kind, command or non-increasing seq
    pub malformed: u64,
    /// sequence numbers missing from the input
    pub input_gaps: u64,
    pub windows: u64,
    pub rejected: u64,
    pub emitted: u64,
    pub rezeros: u64,
    pub close: CloseReason,
    /// `dropped` counts packets refused by the full output buffer or lost to a
    /// failed write
    pub latency: LatencyReport,
}

impl SessionReport {
    pub fn dropped(&self) -> u64 {
        self.latency.dropped
    }
}

struct Outgoing {
    seq: u32,
    t_ns: u64,
    axis_angle: [f32; 3],
    ingest: Instant,
}

/// Reads exactly one frame. `Ok(false)` on a clean or mid-frame end of stream.
fn read_frame(reader: &mut impl Read, buf: &mut [u8; INBOUND_FRAME_LEN]) -> io::Result<bool> {
    let mut filled = 0;
    while filled < buf.len() {
        match reader.read(&mut buf[filled..]) {
            Ok(0) => return Ok(false),
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(true)
}

/// Runs one session to completion over any byte stream.
pub fn run_session<R: Read, W: Write + Send>(mut reader: R, mut writer: W, config: &ServerConfig) -> SessionReport {
    let mut processor = match Processor::new(config.model, config.fields, config.factor) {
        Ok(p) => p,
        Err(e) => {
            return SessionReport {
                frames: 0,
                samples: 0,
                malformed: 0,
                input_gaps: 0,
                windows: 0,
                rejected: 0,
                emitted: 0,
                rezeros: 0,
                close: CloseReason::ReadError(e.to_string()),
                latency: LatencyReport::default(),
            }
        }
    };
    let (tx, rx) = sync_channel::<Outgoing>(config.buffer_cap.max(1));

    thread::scope(|scope| {
        let writer_thread = scope.spawn(move || {
            let mut latencies = Vec::new();
            let mut lost = 0u64;
            let mut last_emit = None;
            let mut failed = false;
            for out in rx {
                if failed {
                    lost += 1;
                    continue;
                }
                let emit = Instant::now();
                let latency_ns = emit.duration_since(out.ingest).as_nanos() as u64;
                let packet = MotionPacket { seq: out.seq, t_ns: out.t_ns, axis_angle: out.axis_angle, latency_ns };
                if let Err(e) = writer.write_all(&packet.encode()) {
                    log::warn!("session writer stopped: {e}");
                    failed = true;
                    lost += 1;
                    continue;
                }
                latencies.push(latency_ns);
                last_emit = Some(emit);
            }
            let _ = writer.flush();
            (latencies, lost, last_emit)
        });

        let mut frames = 0u64;
        let mut samples = 0u64;
        let mut malformed = 0u64;
        let mut input_gaps = 0u64;
        let mut windows = 0u64;
        let mut rejected = 0u64;
        let mut rezeros = 0u64;
        let mut refused = 0u64;
        let mut next_out_seq = 0u32;
        let mut last_seq: Option<u32> = None;
        let mut first_ingest = None;
        let mut buf = [0u8; INBOUND_FRAME_LEN];

        let close = loop {
            match read_frame(&mut reader, &mut buf) {
                Ok(true) => {}
                Ok(false) => break CloseReason::Eof,
                Err(e) => break CloseReason::ReadError(e.to_string()),
            }
            let ingest = Instant::now();
            first_ingest.get_or_insert(ingest);
            frames += 1;
            let packet = match decode_inbound(&buf) {
                Ok(Frame::Sensor(p)) => p,
                Ok(Frame::Control(ControlCommand::Rezero)) => {
                    processor.rezero();
                    rezeros += 1;
                    continue;
                }
                Err(DecodeError::UnknownVersion(v)) => {
                    log::error!("closing session: peer speaks protocol version {v}");
                    break CloseReason::VersionMismatch(v);
                }
                Err(e) => {
                    log::warn!("skipping frame {frames}: {e}");
                    malformed += 1;
                    continue;
                }
            };
            if let Some(last) = last_seq {
                if packet.seq <= last {
                    log::warn!("skipping out-of-order seq {} after {last}", packet.seq);
                    malformed += 1;
                    continue;
                }
                let gap = (packet.seq - last - 1) as u64;
                if gap > 0 {
                    log::warn!("input gap of {gap} before seq {}", packet.seq);
                    input_gaps += gap;
                }
            }
            last_seq = Some(packet.seq);
            samples += 1;
            match processor.push(&packet.to_sample()) {
                Step::Pending => {}
                Step::Rejected => {
                    windows += 1;
                    rejected += 1;
                }
                Step::Emit(r) => {
                    windows += 1;
                    if let Some(stall) = config.stall {
                        if stall.every > 0 && windows % stall.every == 0 {
                            thread::sleep(stall.duration);
                        }
                    }
                    let out = Outgoing { seq: next_out_seq, t_ns: packet.t_ns, axis_angle: wire_axis_angle(&r), ingest };
                    // the seq advances on drops too, so consumers can see them
                    next_out_seq = next_out_seq.wrapping_add(1);
                    match tx.try_send(out) {
                        Ok(()) => {}
                        Err(TrySendError::Full(_)) | Err(TrySendError::Disconnected(_)) => refused += 1,
                    }
                }
            }
        };
        drop(tx);
        let (latencies, lost, last_emit) = writer_thread.join().expect("session writer panicked");
        let elapsed = match (first_ingest, last_emit) {
            (Some(a), Some(b)) => b.duration_since(a),
            _ => Duration::ZERO,
        };
        let emitted = latencies.len() as u64;
        SessionReport {
            frames,
            samples,
            malformed,
            input_gaps,
            windows,
            rejected,
            emitted,
            rezeros,
            close,
            latency: LatencyReport::new(latencies, elapsed, refused + lost),
        }
    })
}

/// Runs one session on an accepted TCP connection.
pub fn run_tcp_session(stream: TcpStream, config: &ServerConfig) -> io::Result<SessionReport> {
    stream.set_nodelay(true)?;
    let writer = stream.try_clone()?;
    let report = run_session(&stream, writer, config);
    let _ = stream.shutdown(Shutdown::Both);
    Ok(report)
}

pub struct Server {
    listener: TcpListener,
    config: Arc<ServerConfig>,
}

impl Server {
    pub fn bind(addr: impl ToSocketAddrs, config: ServerConfig) -> io::Result<Self> {
        Ok(Self { listener: TcpListener::bind(addr)?, config: Arc::new(config) })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Accepts one connection and serves it on the calling thread.
    pub fn serve_one(&self) -> io::Result<SessionReport> {
        let (stream, peer) = self.listener.accept()?;
        log::info!("session from {peer}");
        run_tcp_session(stream, &self.config)
    }

    /// Serves connections in parallel, one thread each. With `max_sessions` the
    /// loop stops accepting after that many and returns their reports in accept
    /// order; without it, it runs until accept fails.
    pub fn run(&self, max_sessions: Option<usize>) -> io::Result<Vec<io::Result<SessionReport>>> {
        let mut handles = Vec::new();
        loop {
            if max_sessions.is_some_and(|m| handles.len() >= m) {
                break;
            }
            let (stream, peer) = self.listener.accept()?;
            log::info!("session from {peer}");
            let config = Arc::clone(&self.config);
            handles.push(thread::spawn(move || {
                let report = run_tcp_session(stream, &config);
                if let Ok(r) = &report {
                    log::info!(
                        "session {peer} closed ({:?}): {} samples, {} emitted, {} dropped, {} malformed",
                        r.close,
                        r.samples,
                        r.emitted,
                        r.dropped(),
                        r.malformed
                    );
                }
                report
            }));
        }
        Ok(handles.into_iter().map(|h| h.join().expect("session thread panicked")).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::packet::SensorPacket;
    use moco_core::geometry::Rot3;
    use moco_core::sensor_sim::{measure_stationary, NoiseSource, NoiseSpec};
    use std::io::Cursor;
    use std::sync::{Condvar, Mutex};

    fn frames(n: u32) -> Vec<u8> {
        let fields = FieldSpec::default();
        let mut noise = NoiseSource::new(&NoiseSpec::noiseless());
        let mut out = Vec::new();
        for i in 0..n {
            let mut s = measure_stationary(&Rot3::identity(), &fields, &mut noise);
            s.t = i as f64 * 5e-4;
            out.extend_from_slice(&SensorPacket::from_sample(i, &s).encode());
        }
        out
    }

    fn config() -> ServerConfig {
        // in-memory input outruns the writer thread; size the buffer to hold every window
        ServerConfig { buffer_cap: 4096, ..ServerConfig::new(CalibrationModel::identity()) }
    }

    fn norm(v: &[f32; 3]) -> f32 {
        v.iter().map(|x| x * x).sum::<f32>().sqrt()
    }

    fn decode_all(bytes: &[u8]) -> Vec<MotionPacket> {
        bytes.chunks_exact(40).map(|c| MotionPacket::decode(c).unwrap()).collect()
    }

    #[test]
    fn stationary_stream_emits_zero_rotation() {
        let mut out = Vec::new();
        let r = run_session(Cursor::new(frames(1005)), &mut out, &config());
        assert_eq!(r.close, CloseReason::Eof);
        assert_eq!((r.samples, r.windows, r.emitted, r.dropped()), (1005, 100, 100, 0));
        let packets = decode_all(&out);
        assert_eq!(packets.len(), 100);
        for (i, p) in packets.iter().enumerate() {
            assert_eq!(p.seq, i as u32);
            assert!(norm(&p.axis_angle) < 1e-6);
        }
        assert!(packets.windows(2).all(|w| w[1].t_ns > w[0].t_ns));
    }

    #[test]
    fn malformed_frames_are_skipped_and_counted() {
        let mut bytes = frames(30);
        bytes[44 * 3 + 20] ^= 1; // crc
        bytes[44 * 7] = b'X'; // magic
        let mut out = Vec::new();
        let r = run_session(Cursor::new(bytes), &mut out, &config());
        assert_eq!(r.malformed, 2);
        assert_eq!(r.samples, 28);
        // the skipped seqs show up as gaps
        assert_eq!(r.input_gaps, 2);
        assert_eq!(r.emitted, 2);
    }

    #[test]
    fn version_mismatch_closes() {
        let mut bytes = frames(20);
        let mut bad = SensorPacket::decode(&bytes[..44]).unwrap().encode();
        bad[2] = 2;
        let crc = crc32fast::hash(&bad[..40]);
        bad[40..].copy_from_slice(&crc.to_le_bytes());
        bytes.splice(44 * 5..44 * 5, bad);
        let mut out = Vec::new();
        let r = run_session(Cursor::new(bytes), &mut out, &config());
        assert_eq!(r.close, CloseReason::VersionMismatch(2));
        assert_eq!(r.samples, 5);
    }

    #[test]
    fn out_of_order_seq_is_skipped() {
        let mut bytes = frames(12);
        let dup = bytes[44 * 4..44 * 5].to_vec();
        bytes.splice(44 * 6..44 * 6, dup);
        let r = run_session(Cursor::new(bytes), Vec::new(), &config());
        assert_eq!(r.malformed, 1);
        assert_eq!(r.samples, 12);
    }

    #[test]
    fn partial_trailing_frame_is_ignored() {
        let mut bytes = frames(10);
        bytes.extend_from_slice(&[b'M', b'C', 1]);
        let r = run_session(Cursor::new(bytes), Vec::new(), &config());
        assert_eq!((r.close, r.samples, r.emitted), (CloseReason::Eof, 10, 1));
    }

    /// A writer that blocks until released: a consumer that never reads.
    struct Stalled(Arc<(Mutex<bool>, Condvar)>);

    impl Write for Stalled {
        fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
            let (lock, cv) = &*self.0;
            let mut open = lock.lock().unwrap();
            while !*open {
                open = cv.wait(open).unwrap();
            }
            Ok(buf.len())
        }
        fn flush(&mut self) -> io::Result<()> {
            Ok(())
        }
    }

    #[test]
    fn stalled_consumer_drops_beyond_the_cap() {
        let gate = Arc::new((Mutex::new(false), Condvar::new()));
        let cfg = ServerConfig { buffer_cap: 8, ..config() };
        let release = Arc::clone(&gate);
        let releaser = thread::spawn(move || {
            thread::sleep(Duration::from_millis(300));
            *release.0.lock().unwrap() = true;
            release.1.notify_all();
        });
        let r = run_session(Cursor::new(frames(10_000)), Stalled(gate), &cfg);
        releaser.join().unwrap();
        assert_eq!(r.windows, 1000);
        // at most the buffer plus the one packet held by the blocked writer get through
        assert!(r.emitted <= 9, "emitted {}", r.emitted);
        assert_eq!(r.emitted + r.dropped(), r.windows);
    }

    #[test]
    fn rezero_control_resets_reference() {
        let fields = FieldSpec::default();
        let mut noise = NoiseSource::new(&NoiseSpec::noiseless());
        let mut bytes = Vec::new();
        for i in 0..40u32 {
            if i == 20 {
                bytes.extend_from_slice(&ControlCommand::Rezero.encode());
            }
            let r = moco_core::geometry::exp_so3(&moco_core::geometry::Vec3::new(0.0, 0.0, if i < 10 { 0.0 } else { 0.3 }));
            let mut s = measure_stationary(&r, &fields, &mut noise);
            s.t = i as f64 * 5e-4;
            bytes.extend_from_slice(&SensorPacket::from_sample(i, &s).encode());
        }
        let mut out = Vec::new();
        let r = run_session(Cursor::new(bytes), &mut out, &config());
        assert_eq!(r.rezeros, 1);
        let p = decode_all(&out);
        assert_eq!(p.len(), 4);
        assert!(norm(&p[0].axis_angle) < 1e-6);
        assert!((norm(&p[1].axis_angle) - 0.3).abs() < 1e-5);
        assert!(norm(&p[2].axis_angle) < 1e-6);
        assert!(norm(&p[3].axis_angle) < 1e-6);
    }

    #[test]
    fn env_cap_parsing() {
        // single test touching the variable, so no cross-test races
        std::env::set_var(BUFFER_CAP_ENV, "17");
        assert_eq!(buffer_cap_from_env(), Some(17));
        std::env::set_var(BUFFER_CAP_ENV, "0");
        assert_eq!(buffer_cap_from_env(), None);
        std::env::set_var(BUFFER_CAP_ENV, "lots");
        assert_eq!(buffer_cap_from_env(), None);
        std::env::remove_var(BUFFER_CAP_ENV);
        assert_eq!(buffer_cap_from_env(), None);
    }
}
