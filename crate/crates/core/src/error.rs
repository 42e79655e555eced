use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("saddle-point system is singular or ill-conditioned (pivot range {min_pivot:e} .. {max_pivot:e})")]
    SingularSystem { min_pivot: f64, max_pivot: f64 },

    #[error("constraint rows are linearly dependent (pivot {pivot:e})")]
    RankDeficientConstraints { pivot: f64 },

    #[error("solver tolerance not reached: stationarity residual {stationarity:e}, feasibility residual {feasibility:e}")]
    ToleranceNotReached { stationarity: f64, feasibility: f64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
