use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch between operands")]
    GridMismatch,

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("unsupported derivative order {0} (maximum is 4)")]
    UnsupportedOrder(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("quadrature failed: {0}")]
    Quadrature(String),

    #[error("kernel not resolved at t = {t}: Nyquist multiplier {tail:.3e}, need n >= {required_n}")]
    Unresolved { t: f64, tail: f64, required_n: usize },

    #[error("time step {dt:.3e} exceeds budget {limit:.3e}")]
    StepBudget { dt: f64, limit: f64 },

    #[error("size guard exceeded: {0}")]
    SizeGuard(String),

    #[error("mass mismatch: {0:.3e}")]
    MassMismatch(f64),

    #[error("not a probability density: {0}")]
    NotAMeasure(String),

    #[error("solver diverged at slice {slice}: {reason}")]
    Divergence { slice: usize, reason: String },

    #[error("resolution too coarse: {0}")]
    Resolution(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("{context}: {source}")]
    Tagged {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn tagged(self, context: impl Into<String>) -> Self {
        Error::Tagged { context: context.into(), source: Box::new(self) }
    }

    /// Innermost error after stripping context tags.
    pub fn root(&self) -> &Error {
        match self {
            Error::Tagged { source, .. } => source.root(),
            e => e,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
