//! Error type shared by every module of the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter is outside its admissible range.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("insufficient periods: need at least {needed}, got {got}")]
    InsufficientPeriods { needed: usize, got: usize },

    #[error("treatment matrix required for {0} but the panel has none")]
    MissingTreatment(&'static str),

    /// The first-stage cross-product is numerically zero.
    #[error("weak first stage: instrument is (numerically) orthogonal to the treatment (first-stage coefficient {first_stage:e})")]
    WeakFirstStage { first_stage: f64 },

    #[error("collinear regressor `{regressor}` after fixed-effect transformation")]
    Collinear { regressor: String },

    /// The estimand denominator is nonpositive or a price variance is zero.
    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    #[error("degenerate variance: {0}")]
    DegenerateVariance(String),

    #[error("invalid bounds: lower {lower} exceeds upper {upper}")]
    InvertedBounds { lower: f64, upper: f64 },

    #[error("invalid significance level {0}: must lie in (0, 0.5)")]
    InvalidAlpha(f64),

    #[error("root finding did not converge: {0}")]
    NoConvergence(String),

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("period `{0}` is present in the panel but missing from the price file")]
    MissingPeriod(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("too many excluded replications: {excluded} of {total}")]
    ExcessiveExclusions { excluded: usize, total: usize },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code: 2 for bad input, 3 for numerical degeneracy.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::WeakFirstStage { .. }
            | Error::Collinear { .. }
            | Error::DegenerateDesign(_)
            | Error::DegenerateVariance(_)
            | Error::NoConvergence(_)
            | Error::ExcessiveExclusions { .. } => 3,
            _ => 2,
        }
    }

    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
