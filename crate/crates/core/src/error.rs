//! Error type shared by every module.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("missing value in column `{column}` at row {row}")]
    MissingValue { column: String, row: usize },
    #[error("column `{column}` must be binary, found {value} at row {row}")]
    NonBinaryTreatment {
        column: String,
        row: usize,
        value: f64,
    },
    #[error("mediator value {value} at row {row} is outside the declared support")]
    InvalidMediator { row: usize, value: f64 },
    #[error("strong monotonicity violated: row {row} has z=0 and d=1")]
    StrongMonotonicityViolated { row: usize },
    #[error("cell (z={z}, d={d}) has no rows")]
    EmptyCell { z: u8, d: u8 },
    #[error("dataset has no covariate columns")]
    NoCovariates,
    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("design is rank deficient")]
    RankDeficient,
    #[error("residual variance is zero; the Gaussian density is degenerate")]
    DegenerateVariance,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("fit failed for nuisance `{name}`: {source}")]
    Nuisance {
        name: String,
        #[source]
        source: Box<Error>,
    },

    #[error("principal score {value} is negative at unit {unit}")]
    NegativeScore { unit: usize, value: f64 },
    #[error("non-finite outcome regression value at quadrature node (unit {unit})")]
    QuadratureOverflow { unit: usize },
    #[error("propensity {value} below clip floor at unit {unit}")]
    ExtremePropensity { unit: usize, value: f64 },
    #[error("estimated proportion of stratum {stratum} is {value} (must be positive)")]
    EmptyStratumEstimate { stratum: String, value: f64 },
    #[error("mediator density ratio {ratio} exceeds the limit at unit {unit}")]
    DensityRatioOverflow { unit: usize, ratio: f64 },
    #[error("division by zero: {0}")]
    DivisionByZero(String),
    #[error("target (z={z}, z'={z_prime}) is not supported")]
    UnsupportedTarget { z: u8, z_prime: u8 },
    #[error("stratum {0} is not admissible under this monotonicity mode")]
    InadmissibleStratum(String),
    #[error("unsupported mediator: {0}")]
    UnsupportedMediator(String),

    #[error("fold count {v} is invalid for n = {n}")]
    BadFoldCount { n: usize, v: usize },
    #[error("{failed} of {total} replicates failed; last error: {last}")]
    TooManyFailedReplicates {
        failed: usize,
        total: usize,
        last: String,
    },
    #[error("sensitivity parameters imply a negative mediator pmf at unit {unit}")]
    ImpliedNegativePmf { unit: usize },
    #[error("invalid discrete DGP: {0}")]
    InvalidDgp(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

/// Broad category used for process exit codes and FFI status codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Estimation,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            Config(_) => ErrorClass::Config,
            MissingColumn(_)
            | MissingValue { .. }
            | NonBinaryTreatment { .. }
            | InvalidMediator { .. }
            | StrongMonotonicityViolated { .. }
            | EmptyCell { .. }
            | NoCovariates
            | LengthMismatch(_)
            | InvalidDgp(_)
            | Io(_) => ErrorClass::Data,
            Nuisance { source, .. } => match source.class() {
                ErrorClass::Config => ErrorClass::Config,
                _ => ErrorClass::Estimation,
            },
            _ => ErrorClass::Estimation,
        }
    }

    /// Process exit code: 2 config, 3 data, 4 estimation.
    pub fn exit_code(&self) -> i32 {
        match self.class() {
            ErrorClass::Config => 2,
            ErrorClass::Data => 3,
            ErrorClass::Estimation => 4,
        }
    }

    pub(crate) fn in_nuisance(self, name: &str) -> Error {
        Error::Nuisance {
            name: name.to_string(),
            source: Box::new(self),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
