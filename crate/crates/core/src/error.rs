use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty trajectory")]
    EmptyTrajectory,
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("insufficient orientations: got {got}, need at least {need}")]
    InsufficientOrientations { got: usize, need: usize },
    #[error("calibration diverged after {iterations} iterations (residual rms {residual_rms:e})")]
    CalibrationDiverged { iterations: usize, residual_rms: f64 },
    #[error("implausible field magnitudes: |accel| = {accel_norm}, |mag| = {mag_norm}")]
    ImplausibleFields { accel_norm: f64, mag_norm: f64 },
    #[error("degenerate: fields parallel")]
    ParallelFields,
    #[error("non-monotone timestamps at index {0}")]
    NonMonotoneTimestamps(usize),
    #[error("stream shorter than one window ({len} < {factor})")]
    ShortStream { len: usize, factor: usize },
    #[error("misaligned streams ({0} vs {1})")]
    MisalignedStreams(usize, usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("zero spectrum")]
    ZeroSpectrum,
    #[error("volume too thin: {0}")]
    VolumeTooThin(String),
    #[error("k-space coordinate beyond Nyquist: |k| = {k}, limit {limit}")]
    BeyondNyquist { k: f64, limit: f64 },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
