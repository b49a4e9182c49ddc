use thiserror::Error;

use crate::models::TargetId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        found: String,
    },
    #[error("matrix is not square ({rows}x{cols})")]
    NonSquare { rows: usize, cols: usize },
    #[error("{context}: matrix is not symmetric positive definite")]
    NotSpd { context: &'static str },
    #[error("block or Schur complement is numerically singular (condition estimate {condition:e})")]
    SingularBlock { condition: f64 },
    #[error("innovation covariance is not positive definite")]
    SingularInnovation,
    #[error("prior covariance is not positive definite")]
    SingularPrior,
    #[error("fused bias information lost positive definiteness")]
    LostPositivity,
    #[error("branch bias covariance is singular")]
    SingularBranchBias,
    #[error("covariance is singular or not positive definite")]
    SingularCovariance,
    #[error("target {0} is already tracked")]
    DuplicateTarget(TargetId),
    #[error("target {0} is not tracked")]
    UnknownTarget(TargetId),
    #[error("no dynamic model supplied for target {0}")]
    MissingModel(TargetId),
    #[error("branch bias prior differs from the fused bias belief by {deviation:e}")]
    InconsistentBiasPrior { deviation: f64 },
    #[error("degenerate geometry: target within {distance:.3} m of a sensor")]
    DegenerateGeometry { distance: f64 },
    #[error("Gauss-Newton initialization diverged after {iterations} iterations")]
    GaussNewtonDiverged { iterations: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("target {target}: {source}")]
    Branch {
        target: TargetId,
        #[source]
        source: Box<Error>,
    },
    #[error("Monte-Carlo run {run}: {source}")]
    Run {
        run: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn dims(context: &'static str, expected: impl ToString, found: impl ToString) -> Self {
        Error::DimensionMismatch {
            context,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn for_target(self, target: TargetId) -> Self {
        Error::Branch {
            target,
            source: Box::new(self),
        }
    }

    pub(crate) fn for_run(self, run: usize) -> Self {
        Error::Run {
            run,
            source: Box::new(self),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
