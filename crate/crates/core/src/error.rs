use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{field}` = {value}: {bound}")]
    InvalidParameter {
        field: &'static str,
        value: String,
        bound: &'static str,
    },

    #[error("length mismatch: expected {expected} weights, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("distribution is not normalized (sum = {sum})")]
    Unnormalized { sum: f64 },

    #[error("step size underflow at t = {t} (dt = {dt:e})")]
    StepSizeUnderflow { t: f64, dt: f64 },

    #[error("no stationary state detected before t_max = {t_max}")]
    NotConverged { t_max: f64 },

    #[error("metastable plateau never entered")]
    PlateauNeverEntered,

    #[error("metastable plateau entered at t = {t_enter} but never exited")]
    PlateauNeverExited { t_enter: f64 },

    #[error("crossover root not bracketed in (0, 1) for horizon T = {horizon}")]
    RootNotBracketed { horizon: f64 },

    #[error("collapse requires a trajectory at r_crit = {r_crit}")]
    MissingCriticalTrajectory { r_crit: f64 },

    #[error("trajectories do not share sample times")]
    MismatchedSampleTimes,

    #[error("Pauli norm drifted by {drift:e} during a unitary step")]
    NormDrift { drift: f64 },

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("unsupported schema version {found} (reader supports major version {supported})")]
    UnsupportedSchema { found: String, supported: u32 },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn invalid(field: &'static str, value: impl ToString, bound: &'static str) -> Self {
        Error::InvalidParameter {
            field,
            value: value.to_string(),
            bound,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than numerical failure.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter { .. }
                | Error::Config { .. }
                | Error::Parse { .. }
                | Error::UnsupportedSchema { .. }
                | Error::LengthMismatch { .. }
        )
    }
}
