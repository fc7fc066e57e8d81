use thiserror::Error;

/// Errors raised anywhere in the calibration pipeline.
#[derive(Debug, Error)]
pub enum CalError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("one-step forecast covariance is singular or ill-conditioned at t={t} (condition estimate {condition:e})")]
    SingularForecast { t: usize, condition: f64 },

    #[error("degenerate design: reference values have zero spread")]
    DegenerateDesign,

    #[error("degenerate response: responses have zero spread")]
    DegenerateResponse,

    #[error("slope {slope:e} is within the near-zero guard {eps:e}")]
    NearZeroSlope { slope: f64, eps: f64 },

    #[error("degenerate posterior: {0}")]
    DegeneratePosterior(&'static str),

    #[error("need at least {needed} observations, found {found}")]
    InsufficientData { needed: usize, found: usize },

    #[error("no viable proposal: every importance weight is -inf")]
    NoViableProposal,

    #[error("proposal {index} failed: {source}")]
    Proposal {
        index: usize,
        #[source]
        source: Box<CalError>,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CalError {
    /// True for failures of the numerical machinery, as opposed to bad input or I/O.
    pub fn is_numerical(&self) -> bool {
        match self {
            CalError::SingularForecast { .. }
            | CalError::NearZeroSlope { .. }
            | CalError::DegeneratePosterior(_)
            | CalError::NoViableProposal
            | CalError::DegenerateDesign
            | CalError::DegenerateResponse => true,
            CalError::Proposal { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    pub fn is_io(&self) -> bool {
        matches!(self, CalError::Io(_)) || matches!(self, CalError::Csv(e) if e.is_io_error())
    }
}

pub type Result<T> = std::result::Result<T, CalError>;
