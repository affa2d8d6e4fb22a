use std::path::PathBuf;

use kmlead_core::report::ValidationReport;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] kmlead_core::Error),

    #[error("{}: {message}", .path.display())]
    Config { path: PathBuf, message: String },

    /// Input files parsed but failed validation.
    #[error("validation failed with {} error finding(s)", .0.error_count())]
    Invalid(ValidationReport),

    #[error("{0}")]
    Usage(String),
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_DIAGNOSTICS: i32 = 3;

impl Error {
    pub fn exit_code(&self) -> i32 {
        use kmlead_core::Error as C;
        match self {
            Error::Invalid(_) | Error::Config { .. } | Error::Usage(_) => EXIT_VALIDATION,
            Error::Core(C::Parse { .. } | C::Schema { .. } | C::ExportBlocked(_))
            | Error::Core(C::MissingCovariate { .. } | C::IncompatibleCovariate { .. }) => EXIT_VALIDATION,
            Error::Core(C::Diagnostics(_)) => EXIT_DIAGNOSTICS,
            Error::Core(_) => EXIT_FAILURE,
        }
    }

    /// The findings behind a validation failure, if any.
    pub fn report(&self) -> Option<&ValidationReport> {
        match self {
            Error::Invalid(r) | Error::Core(kmlead_core::Error::ExportBlocked(r)) => Some(r),
            _ => None,
        }
    }
}
