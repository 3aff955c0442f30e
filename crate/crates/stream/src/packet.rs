//! Fixed-size little-endian frames.
//!
//! Inbound frames (sensor, control) are 44 bytes; outbound motion frames are 40.
//! Every frame starts with the magic bytes `"MC"`, a version byte and a kind
//! byte, and ends with a CRC-32 (IEEE) over all preceding bytes.
//!
//! Sensor frame:
//!
//! | offset | size | field          |
//! |-------:|-----:|----------------|
//! | 0      | 2    | magic `"MC"`   |
//! | 2      | 1    | version        |
//! | 3      | 1    | kind = 1       |
//! | 4      | 4    | seq u32        |
//! | 8      | 8    | t_ns u64       |
//! | 16     | 12   | accel 3×f32    |
//! | 28     | 12   | mag 3×f32      |
//! | 40     | 4    | crc32          |
//!
//! Motion frame: magic, version, kind = 2, seq u32 @4, t_ns u64 @8, axis-angle
//! 3×f32 @16, latency_ns u64 @28, crc32 @36.
//!
//! Control frame: magic, version, kind = 3, command u32 @4, zero padding to 40,
//! crc32 @40.

use moco_core::sensor_sim::SensorSample;
use moco_core::geometry::Vec3;
use thiserror::Error;

pub const MAGIC: [u8; 2] = *b"MC";
pub const VERSION: u8 = 1;
pub const SENSOR_FRAME_LEN: usize = 44;
pub const MOTION_FRAME_LEN: usize = 40;
pub const INBOUND_FRAME_LEN: usize = SENSOR_FRAME_LEN;

pub const KIND_SENSOR: u8 = 1;
pub const KIND_MOTION: u8 = 2;
pub const KIND_CONTROL: u8 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 2]),
    #[error("unknown protocol version {0}")]
    UnknownVersion(u8),
    #[error("unknown frame kind {0}")]
    UnknownKind(u8),
    #[error("crc mismatch: frame says {expected:08x}, computed {computed:08x}")]
    BadCrc { expected: u32, computed: u32 },
    #[error("frame length {got}, expected {expected}")]
    BadLength { got: usize, expected: usize },
    #[error("unknown control command {0}")]
    UnknownCommand(u32),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorPacket {
    pub seq: u32,
    pub t_ns: u64,
    /// m/s²
    pub accel: [f32; 3],
    /// T
    pub mag: [f32; 3],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionPacket {
    pub seq: u32,
    pub t_ns: u64,
    /// rad, normalized to the session's first decimated sample
    pub axis_angle: [f32; 3],
    pub latency_ns: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlCommand {
    /// the next decimated sample becomes the new reference orientation
    Rezero = 1,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Frame {
    Sensor(SensorPacket),
    Control(ControlCommand),
}

fn vec3_to_f32(v: &Vec3) -> [f32; 3] {
    [v.x as f32, v.y as f32, v.z as f32]
}

fn f32_to_vec3(a: &[f32; 3]) -> Vec3 {
    Vec3::new(a[0] as f64, a[1] as f64, a[2] as f64)
}

impl SensorPacket {
    /// Rounds the sample to the wire precision; `t` is seconds.
    pub fn from_sample(seq: u32, sample: &SensorSample) -> Self {
        Self {
            seq,
            t_ns: (sample.t * 1e9).round().max(0.0) as u64,
            accel: vec3_to_f32(&sample.accel),
            mag: vec3_to_f32(&sample.mag),
        }
    }

    pub fn to_sample(&self) -> SensorSample {
        SensorSample {
            t: self.t_ns as f64 * 1e-9,
            accel: f32_to_vec3(&self.accel),
            mag: f32_to_vec3(&self.mag),
        }
    }

    pub fn encode(&self) -> [u8; SENSOR_FRAME_LEN] {
        let mut b = [0u8; SENSOR_FRAME_LEN];
        header(&mut b, KIND_SENSOR);
        b[4..8].copy_from_slice(&self.seq.to_le_bytes());
        b[8..16].copy_from_slice(&self.t_ns.to_le_bytes());
        put_f32s(&mut b[16..28], &self.accel);
        put_f32s(&mut b[28..40], &self.mag);
        seal(&mut b);
        b
    }

    pub fn decode(b: &[u8]) -> Result<Self, DecodeError> {
        match decode_inbound(b)? {
            Frame::Sensor(p) => Ok(p),
            Frame::Control(_) => Err(DecodeError::UnknownKind(KIND_CONTROL)),
        }
    }
}

impl MotionPacket {
    pub fn encode(&self) -> [u8; MOTION_FRAME_LEN] {
        let mut b = [0u8; MOTION_FRAME_LEN];
        header(&mut b, KIND_MOTION);
        b[4..8].copy_from_slice(&self.seq.to_le_bytes());
        b[8..16].copy_from_slice(&self.t_ns.to_le_bytes());
        put_f32s(&mut b[16..28], &self.axis_angle);
        b[28..36].copy_from_slice(&self.latency_ns.to_le_bytes());
        seal(&mut b);
        b
    }

    pub fn decode(b: &[u8]) -> Result<Self, DecodeError> {
        check_frame(b, MOTION_FRAME_LEN)?;
        if b[3] != KIND_MOTION {
            return Err(DecodeError::UnknownKind(b[3]));
        }
        Ok(Self {
            seq: u32_at(b, 4),
            t_ns: u64_at(b, 8),
            axis_angle: f32s_at(b, 16),
            latency_ns: u64_at(b, 28),
        })
    }
}

impl ControlCommand {
    pub fn encode(self) -> [u8; INBOUND_FRAME_LEN] {
        let mut b = [0u8; INBOUND_FRAME_LEN];
        header(&mut b, KIND_CONTROL);
        b[4..8].copy_from_slice(&(self as u32).to_le_bytes());
        seal(&mut b);
        b
    }
}

impl Frame {
    pub fn encode(&self) -> [u8; INBOUND_FRAME_LEN] {
        match self {
            Frame::Sensor(p) => p.encode(),
            Frame::Control(c) => c.encode(),
        }
    }
}

/// Decodes a 44-byte inbound frame. Checks run in order: length, magic, crc,
/// version, kind.
pub fn decode_inbound(b: &[u8]) -> Result<Frame, DecodeError> {
    check_frame(b, INBOUND_FRAME_LEN)?;
    match b[3] {
        KIND_SENSOR => Ok(Frame::Sensor(SensorPacket {
            seq: u32_at(b, 4),
            t_ns: u64_at(b, 8),
            accel: f32s_at(b, 16),
            mag: f32s_at(b, 28),
        })),
        KIND_CONTROL => match u32_at(b, 4) {
            1 => Ok(Frame::Control(ControlCommand::Rezero)),
            other => Err(DecodeError::UnknownCommand(other)),
        },
        other => Err(DecodeError::UnknownKind(other)),
    }
}

fn header(b: &mut [u8], kind: u8) {
    b[0..2].copy_from_slice(&MAGIC);
    b[2] = VERSION;
    b[3] = kind;
}

fn seal(b: &mut [u8]) {
    let n = b.len() - 4;
    let crc = crc32fast::hash(&b[..n]);
    b[n..].copy_from_slice(&crc.to_le_bytes());
}

fn check_frame(b: &[u8], len: usize) -> Result<(), DecodeError> {
    if b.len() != len {
        return Err(DecodeError::BadLength { got: b.len(), expected: len });
    }
    if b[0..2] != MAGIC {
        return Err(DecodeError::BadMagic([b[0], b[1]]));
    }
    let expected = u32_at(b, len - 4);
    let computed = crc32fast::hash(&b[..len - 4]);
    if expected != computed {
        return Err(DecodeError::BadCrc { expected, computed });
    }
    // after the crc, so a damaged version byte is a skipped frame, not a mismatch
    if b[2] != VERSION {
        return Err(DecodeError::UnknownVersion(b[2]));
    }
    Ok(())
}

fn put_f32s(dst: &mut [u8], v: &[f32; 3]) {
    for (chunk, x) in dst.chunks_exact_mut(4).zip(v) {
        chunk.copy_from_slice(&x.to_le_bytes());
    }
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().expect("4-byte slice"))
}

fn u64_at(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().expect("8-byte slice"))
}

fn f32s_at(b: &[u8], at: usize) -> [f32; 3] {
    [0, 1, 2].map(|i| f32::from_le_bytes(b[at + 4 * i..at + 4 * i + 4].try_into().expect("4-byte slice")))
}
