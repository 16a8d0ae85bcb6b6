use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A user-supplied or derived field returned NaN or infinity.
    #[error("non-finite value while evaluating {what} at {point}")]
    NonFinite { what: &'static str, point: String },

    #[error("finite-difference step {0:e} is below the 1e-12 floor")]
    StepUnderflow(f64),

    #[error("characteristic weight overflow: |log q| = {log_q:e} exceeds 700 at s = {s}")]
    WeightOverflow { log_q: f64, s: f64 },

    #[error("characteristic state became non-finite at s = {s}")]
    PathNotFinite { s: f64 },

    #[error("degenerate eigenvalues: |lambda1 - lambda2| = {0:e}")]
    DegenerateEigenvalues(f64),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{failed} of {total} slice nodes failed (first: {first})")]
    SliceFailure {
        failed: usize,
        total: usize,
        first: String,
    },

    #[error("refusing to overwrite {0} (pass --force)")]
    WouldOverwrite(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn non_finite(what: &'static str, point: &crate::Vec3) -> Self {
        Error::NonFinite {
            what,
            point: crate::vec3::format_point(point),
        }
    }

    /// True for failures caused by the numerics rather than by the inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. }
                | Error::StepUnderflow(_)
                | Error::WeightOverflow { .. }
                | Error::PathNotFinite { .. }
                | Error::DegenerateEigenvalues(_)
                | Error::SliceFailure { .. }
        )
    }
}
