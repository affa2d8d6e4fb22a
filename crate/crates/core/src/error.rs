use thiserror::Error;

use crate::report::ValidationReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: String,
        line: u64,
        column: u64,
        message: String,
    },

    #[error("{path}: unsupported schema header {found:?} (expected \"# km-lead v1\")")]
    Schema { path: String, found: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("risk tables cannot be adjudicated: {0}")]
    Structure(String),

    #[error("export blocked by {} error finding(s)", .0.error_count())]
    ExportBlocked(ValidationReport),

    #[error("reconstruction infeasible in interval [{start}, {end}) months: {reason}")]
    Reconstruction { start: f64, end: f64, reason: String },

    #[error("missing covariate {covariate:?} in profile {profile}")]
    MissingCovariate { covariate: String, profile: String },

    #[error("covariate {covariate:?} has incompatible kinds across profiles")]
    IncompatibleCovariate { covariate: String },

    #[error("clustering: {0}")]
    Clustering(String),

    #[error("model: {0}")]
    Model(String),

    #[error("convergence diagnostics failed: {0}")]
    Diagnostics(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl std::fmt::Display, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_string(),
            source,
        }
    }
}
