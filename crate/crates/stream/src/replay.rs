//! Paced sensor source.
//!
//! Frames are sent on an absolute schedule `start + i/rate`, so sleep overshoot
//! never accumulates: any one-second window carries `rate` frames to within one.

use std::io::{self, Read, Write};
use std::net::{Shutdown, TcpStream, ToSocketAddrs};
use std::thread;
use std::time::{Duration, Instant};

use moco_core::sensor_sim::SensorSample;

use crate::packet::{Frame, MotionPacket, SensorPacket, MOTION_FRAME_LEN};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplayOptions {
    /// frames per second; 0 sends as fast as possible
    pub rate: f64,
    /// read motion packets back while sending. Off simulates a consumer that
    /// stalls until the input ends, then drains and discards the output; closing
    /// with unread data would reset the connection and lose queued input.
    pub read_back: bool,
}

impl Default for ReplayOptions {
    fn default() -> Self {
        Self { rate: 2000.0, read_back: true }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReplayReport {
    pub sent: u64,
    /// send time of each frame relative to the first
    pub send_offsets: Vec<Duration>,
    pub elapsed: Duration,
    pub received: Vec<MotionPacket>,
    /// arrival time of each received packet relative to the first send
    pub receive_offsets: Vec<Duration>,
    /// motion frames that failed to decode
    pub bad_frames: u64,
}

impl ReplayReport {
    /// Mean spacing between consecutive sends.
    pub fn mean_interval(&self) -> Option<Duration> {
        let n = self.send_offsets.len();
        (n >= 2).then(|| (self.send_offsets[n - 1] - self.send_offsets[0]) / (n as u32 - 1))
    }
}

/// Sensor frames with `seq = 0, 1, …`.
pub fn frames_from_samples(samples: &[SensorSample]) -> Vec<Frame> {
    samples.iter().enumerate().map(|(i, s)| Frame::Sensor(SensorPacket::from_sample(i as u32, s))).collect()
}

/// Frame counts in consecutive windows of `width` starting at the first send.
pub fn window_counts(offsets: &[Duration], width: Duration) -> Vec<usize> {
    let Some(last) = offsets.last() else {
        return Vec::new();
    };
    let bins = (last.as_nanos() / width.as_nanos()) as usize + 1;
    let mut counts = vec![0; bins];
    for o in offsets {
        counts[(o.as_nanos() / width.as_nanos()) as usize] += 1;
    }
    counts
}

fn read_motion(mut stream: TcpStream, start: Instant) -> (Vec<MotionPacket>, Vec<Duration>, u64) {
    let mut packets = Vec::new();
    let mut arrivals = Vec::new();
    let mut bad = 0;
    let mut buf = [0u8; MOTION_FRAME_LEN];
    while stream.read_exact(&mut buf).is_ok() {
        arrivals.push(start.elapsed());
        match MotionPacket::decode(&buf) {
            Ok(p) => packets.push(p),
            Err(_) => bad += 1,
        }
    }
    (packets, arrivals, bad)
}

/// Sends `frames` to `addr`, then half-closes and waits for the server to
/// finish. With `read_back`, returns every motion packet the server emitted.
pub fn replay(addr: impl ToSocketAddrs, frames: &[Frame], opts: &ReplayOptions) -> io::Result<ReplayReport> {
    if !(opts.rate >= 0.0) || !opts.rate.is_finite() {
        return Err(io::Error::new(io::ErrorKind::InvalidInput, format!("replay rate must be finite and ≥ 0, got {}", opts.rate)));
    }
    let mut stream = TcpStream::connect(addr)?;
    stream.set_nodelay(true)?;
    let start = Instant::now();
    let reader = if opts.read_back {
        let rs = stream.try_clone()?;
        Some(thread::spawn(move || read_motion(rs, start)))
    } else {
        None
    };

    let period = (opts.rate > 0.0).then(|| Duration::from_secs_f64(1.0 / opts.rate));
    let mut send_offsets = Vec::with_capacity(frames.len());
    for (i, f) in frames.iter().enumerate() {
        if let Some(p) = period {
            let due = start + p.mul_f64(i as f64);
            let now = Instant::now();
            if due > now {
                thread::sleep(due - now);
            }
        }
        send_offsets.push(start.elapsed());
        stream.write_all(&f.encode())?;
    }
    stream.flush()?;
    stream.shutdown(Shutdown::Write)?;
    let (received, receive_offsets, bad_frames) = match reader {
        Some(h) => h.join().map_err(|_| io::Error::other("replay reader panicked"))?,
        None => {
            io::copy(&mut stream, &mut io::sink())?;
            (Vec::new(), Vec::new(), 0)
        }
    };
    let elapsed = start.elapsed();
    let first = send_offsets.first().copied().unwrap_or_default();
    Ok(ReplayReport {
        sent: frames.len() as u64,
        send_offsets: send_offsets.iter().map(|o| *o - first).collect(),
        elapsed,
        received,
        receive_offsets,
        bad_frames,
    })
}
