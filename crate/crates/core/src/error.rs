use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("plant is not stable: spectral radius of A is {spectral_radius:.6} (must be < 1)")]
    Unstable { spectral_radius: f64 },

    #[error("I - A is singular; the steady-state map is undefined")]
    SingularSteadyState,

    #[error("matrix {0} is not symmetric")]
    NotSymmetric(&'static str),

    #[error("matrix {0} is not positive definite")]
    NotPositiveDefinite(&'static str),

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("{field} = {value} is outside the admissible range [{min}, {max}]")]
    OutOfRange {
        field: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("{what} did not converge after {iterations} iterations")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
    },

    #[error("utility value is not finite")]
    NonFiniteUtility,

    #[error("feedback must be +1 or -1, got {0}")]
    InvalidFeedback(i64),

    #[error("an analytic gradient is not available for the {0} utility")]
    GradientUnavailable(&'static str),

    #[error("horizons differ across replicas: {0:?}")]
    RaggedHorizons(Vec<usize>),

    #[error("configuration error at `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("unknown builtin `{name}`; available: {available}")]
    UnknownBuiltin { name: String, available: String },

    #[error("replica {replica} failed: {reason}")]
    ReplicaFailed { replica: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

pub(crate) fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            got,
        })
    }
}
