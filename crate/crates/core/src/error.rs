use thiserror::Error;

/// Error type shared across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty ensemble")]
    EmptyEnsemble,
    #[error("degenerate ensemble (fewer than 2 members)")]
    DegenerateEnsemble,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("singular covariance")]
    SingularCovariance,
    #[error("covariance is not positive definite")]
    NotPositiveDefinite,
    #[error("time grid misalignment: interval [{t0}, {t1}] is not a whole number of steps of size {h}")]
    TimeGridMisalignment { t0: f64, t1: f64, h: f64 },
    #[error("step size must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("inflation factor must be positive, got {0}")]
    NonPositiveInflation(f64),
    #[error("localization radius must be positive, got {0}")]
    NonPositiveRadius(f64),
    #[error("invalid grid period {0}")]
    InvalidPeriod(usize),
    #[error("filter degenerate: all particle weights underflowed to zero")]
    FilterDegenerate,
    #[error("zero ensemble variance in coordinate {0}")]
    ZeroVariance(usize),
    #[error("localization is not supported by the {0} algorithm")]
    LocalizationUnsupported(&'static str),
    #[error("observation index {index} out of range for state dimension {n_state}")]
    ObservationIndexOutOfRange { index: usize, n_state: usize },
    #[error("degenerate histogram: zero variance of scaled ranks")]
    DegenerateHistogram,
    #[error("beta parameters must be positive, got alpha={alpha}, beta={beta}")]
    NonPositiveBetaParams { alpha: f64, beta: f64 },
    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },
    #[error("cycle {cycle}: {source}")]
    Cycle {
        cycle: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("tangent-linear/adjoint model not available for this model")]
    TlmUnavailable,
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Wrap a filter or model failure with the assimilation cycle it occurred in.
    pub fn at_cycle(self, cycle: usize) -> Error {
        Error::Cycle {
            cycle,
            source: Box::new(self),
        }
    }
}
