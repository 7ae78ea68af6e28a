use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse failure class, used by callers to map errors onto process exit
/// codes: bad configuration, bad input data, or a numerical breakdown.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    InvalidParameter,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("patient {0:?} appears in the event stream but carries no label")]
    UnlabeledPatient(String),

    #[error("patient {patient:?} has a negative count {count} for covariate {covariate:?}")]
    NegativeCount {
        patient: String,
        covariate: String,
        count: i64,
    },

    #[error("patient {0:?} is labeled more than once")]
    DuplicateLabel(String),

    #[error("count overflow while accumulating events for patient {0:?}")]
    CountOverflow(String),

    #[error("requested {requested} validation patients but the cohort has only {available}")]
    ValidationSizeExceeded { requested: usize, available: usize },

    #[error("component count {k} outside the valid range 1..={limit}")]
    ComponentCountOutOfRange { k: usize, limit: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("{0} is empty")]
    EmptyInput(&'static str),

    #[error("error curve needs at least three consecutive component counts, got {0}")]
    CurveTooShort(usize),

    #[error("error curve component counts must be consecutive (gap after k={0})")]
    CurveNotConsecutive(usize),

    #[error("covariate weights and divergence table disagree: {0}")]
    MisalignedFeatures(String),

    #[error("all covariate weights are zero; the factorization produced an empty basis")]
    AllZeroWeights,

    #[error("covariate index {index} outside the universe of {universe} covariates")]
    CovariateOutOfRange { index: usize, universe: usize },

    #[error("prevalence {0} outside [0, 1]")]
    ProbabilityOutOfRange(f64),

    #[error("smoothing epsilon must be positive, got {0}")]
    NonPositiveEpsilon(f64),

    #[error("threshold {threshold} admits only {available} undiagnosed patients, need {needed} for balanced sampling")]
    InsufficientNegatives {
        threshold: f64,
        needed: usize,
        available: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid generator configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("{path}:{line}: {message}")]
    Format {
        path: String,
        line: usize,
        message: String,
    },

    #[error("malformed container: {0}")]
    Container(String),

    #[error("refusing to read {0}: the run that produced it never completed")]
    IncompleteRun(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Attaches the path to an I/O error so diagnostics name the file.
pub fn io_context(path: &std::path::Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(
        e.kind(),
        format!("{}: {e}", path.display()),
    ))
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::ValidationSizeExceeded { .. }
            | Error::ComponentCountOutOfRange { .. }
            | Error::NonPositiveEpsilon(_)
            | Error::InvalidParameter(_)
            | Error::InvalidConfig(_)
            | Error::CurveTooShort(_)
            | Error::CurveNotConsecutive(_) => ErrorKind::InvalidParameter,
            Error::AllZeroWeights | Error::NonFinite(_) => ErrorKind::Numerical,
            _ => ErrorKind::Data,
        }
    }
}
