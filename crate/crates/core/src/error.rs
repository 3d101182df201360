use std::path::PathBuf;

use thiserror::Error;

/// Everything that can go wrong inside the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("non-finite coordinate in point {index}")]
    NonFinite { index: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("invalid polyline `{id}`: {reason}")]
    InvalidPolyline { id: String, reason: String },

    #[error("elevation histogram has no unique peak")]
    NoUniquePeak,

    #[error("ground band [{z_low}, {z_high}] keeps no points")]
    EmptyGround { z_low: f64, z_high: f64 },

    #[error("energy field has no voxel with positive energy")]
    NoPositiveEnergy,

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("no feasible transition into slice {slice}")]
    NoFeasibleTransition { slice: usize },

    #[error("invalid scene field `{field}`: {reason}")]
    InvalidScene { field: &'static str, reason: String },

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    /// Bad input or configuration, as opposed to a failure while running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::EmptyCloud
                | Error::NonFinite { .. }
                | Error::InvalidParameter { .. }
                | Error::InvalidPolyline { .. }
                | Error::InvalidScene { .. }
                | Error::Config(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
