//! Real-time compass service over a fixed-frame byte-stream protocol.
//!
//! - [`packet`]: 44-byte sensor/control frames and 40-byte motion frames.
//! - [`pipeline`]: calibrate → window → average → estimate → normalize, in
//!   streaming and batch form.
//! - [`server`]: one session per connection, bounded output buffer with drop
//!   accounting.
//! - [`replay`]: paced sensor source that reads the motion packets back.
//! - [`latency`]: per-session latency statistics.

pub mod latency;
pub mod packet;
pub mod pipeline;
pub mod replay;
pub mod server;

pub use latency::LatencyReport;
pub use packet::{ControlCommand, DecodeError, Frame, MotionPacket, SensorPacket};
pub use pipeline::{offline_orientations, wire_axis_angle, Processor};
pub use replay::{replay, ReplayOptions, ReplayReport};
pub use server::{run_session, Server, ServerConfig, SessionReport};
