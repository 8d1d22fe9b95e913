//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path} at {context}: {message}")]
    Parse {
        path: String,
        context: String,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    /// Delay or angle values carry no spread, so sigma-normalized
    /// distances are undefined.
    #[error("degenerate axis: {0}")]
    DegenerateAxis(String),

    /// The contour tree could not be built from the given lines.
    #[error("contour tree structure error: {0}")]
    Structure(String),

    /// No RANSAC iteration reached the required inlier fraction.
    #[error("model fit failed: best inlier fraction {best_fraction:.3} below {required:.3}")]
    FitFailed { best_fraction: f64, required: f64 },

    /// A metric is undefined on the given input (e.g. single cluster,
    /// constant ranks).
    #[error("metric undefined: {0}")]
    MetricUndefined(String),
}

impl Error {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub(crate) fn parse(path: &str, context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.to_string(),
            context: context.into(),
            message: message.into(),
        }
    }
}
