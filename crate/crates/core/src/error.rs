use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to parse {what}: {message}")]
    Parse { what: String, message: String },

    #[error("invalid value for `{field}`: {reason}")]
    Validation { field: String, reason: String },

    #[error("vehicles overlap in platoon {platoon}: gap {gap_m} m is not larger than the vehicle length")]
    Placement { platoon: usize, gap_m: f64 },

    #[error(
        "position {position_m} m is outside the segment tiling of the {freq_mhz} MHz DTT profile"
    )]
    NoSegment { freq_mhz: f64, position_m: f64 },

    #[error("channel {channel} cannot be sensed during the transmission phase (current channel is {current})")]
    PhaseViolation { channel: usize, current: usize },

    #[error("metrics log is empty")]
    EmptyLog,

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
