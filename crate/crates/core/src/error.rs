use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no data: {0}")]
    NoData(String),

    #[error("dimension mismatch: expected {expected}, found {found} ({context})")]
    DimensionMismatch {
        expected: usize,
        found: usize,
        context: String,
    },

    #[error("invalid trajectory '{id}': {reason}")]
    InvalidTrajectory { id: String, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path} at line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("index {index} out of range for bank of size {len}")]
    Index { index: usize, len: usize },

    #[error("value out of range: {0}")]
    Range(String),

    #[error("non-finite input: {0}")]
    NonFiniteInput(String),

    #[error("time {t} outside the domain of {family}")]
    TimeDomain { t: f64, family: &'static str },

    #[error("operation not supported for the {0} path family")]
    UnsupportedFamily(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numerical blowup at forecast step {forecast_step}, ode step {ode_step} (|g(t)| = {g_abs:.3e}); consider a larger sigma_min or more steps")]
    NumericalBlowup {
        forecast_step: usize,
        ode_step: usize,
        g_abs: f64,
    },

    #[error("trajectory diverged at t = {t} (|x| = {norm:.3e})")]
    DivergedTrajectory { t: f64, norm: f64 },

    #[error("insufficient scaling region: {found} radii in the fit window, need at least 3")]
    InsufficientScaling { found: usize },

    #[error("all {0} ensemble samples failed")]
    EnsembleFailed(usize),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
