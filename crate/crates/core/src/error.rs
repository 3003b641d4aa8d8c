//! Crate-wide error type with a coarse input-vs-computation split that the
//! CLI maps onto process exit codes.

use thiserror::Error;

/// Everything that can go wrong in this crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A file violated its documented schema (bad header, out-of-range
    /// value, duplicate key, ...). The message carries the row number when
    /// one is available.
    #[error("{path}: {message}")]
    Schema { path: String, message: String },

    /// An underlying I/O failure, annotated with the path we were touching.
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// A caller violated a documented precondition (mismatched lengths,
    /// empty inputs, out-of-range configuration values, ...).
    #[error("{0}")]
    InvalidArgument(String),

    /// A statistic that needs both classes was handed labels that are all
    /// zero or all one.
    #[error("labels are degenerate: {0}")]
    DegenerateLabels(String),

    /// A classifier training target contains only one class.
    #[error("training target is degenerate: {0}")]
    DegenerateTarget(String),

    /// The information matrix has no unique solution; the named columns are
    /// (near-)collinear with earlier columns or the intercept.
    #[error("design matrix is singular; collinear columns: {}", .0.join(", "))]
    SingularDesign(Vec<String>),

    /// A design column never varies, which makes its coefficient
    /// unidentifiable next to the intercept.
    #[error("feature '{0}' is constant across the fitted rows; drop it or change the design")]
    ConstantColumn(String),

    /// A bootstrap resample kept producing an undefined statistic even
    /// after the capped number of redraws.
    #[error("bootstrap statistic undefined on resample {resample} after {attempts} redraw attempts")]
    BootstrapDegenerate { resample: usize, attempts: usize },
}

/// Coarse classification used by the CLI to choose an exit code: `Input`
/// failures are the caller's to fix (exit 2), `Computation` failures mean
/// the data defeated the statistics (exit 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Input,
    Computation,
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Schema { .. } | Error::Io { .. } | Error::InvalidArgument(_) => {
                ErrorCategory::Input
            }
            Error::DegenerateLabels(_)
            | Error::DegenerateTarget(_)
            | Error::SingularDesign(_)
            | Error::ConstantColumn(_)
            | Error::BootstrapDegenerate { .. } => ErrorCategory::Computation,
        }
    }

    /// Convenience constructor for schema violations.
    pub fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Convenience constructor for I/O failures.
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Convenience constructor for precondition violations.
    pub fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidArgument(message.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
