use std::io;

/// Failures mapped to process exit codes: 1 for bad input, 2 for runtime failure.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<moco_core::Error> for CliError {
    fn from(e: moco_core::Error) -> Self {
        use moco_core::Error::*;
        match e {
            Io(io) => io.into(),
            EmptyTrajectory
            | Empty(_)
            | InvalidArgument(_)
            | InsufficientOrientations { .. }
            | NonMonotoneTimestamps(_)
            | ShortStream { .. }
            | MisalignedStreams(..)
            | DimensionMismatch(_)
            | VolumeTooThin(_)
            | BeyondNyquist { .. }
            | Format(_) => CliError::Validation(e.to_string()),
            CalibrationDiverged { .. } | ImplausibleFields { .. } | ParallelFields | ZeroSpectrum | Domain(_) => {
                CliError::Runtime(e.to_string())
            }
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        match e.kind() {
            io::ErrorKind::NotFound | io::ErrorKind::InvalidInput => CliError::Validation(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        if e.is_io_error() {
            match e.into_kind() {
                csv::ErrorKind::Io(io) => io.into(),
                _ => unreachable!(),
            }
        } else {
            CliError::Validation(e.to_string())
        }
    }
}

pub fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}
