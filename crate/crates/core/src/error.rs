use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid lattice: {0}")]
    InvalidSpec(String),

    #[error("analytic ring eigensystem needs an even number of sites >= 4, got {0}")]
    OddRing(usize),

    #[error("{what} {index} out of range 1..={max}")]
    OutOfRange {
        what: &'static str,
        index: usize,
        max: usize,
    },

    #[error("invalid initial state: {0}")]
    InvalidState(String),

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("perturbation theory does not cover this setup: {0}")]
    Unsupported(String),

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("dense oracle refuses N = {0} (limit {limit})", limit = crate::oracle::ORACLE_MAX_SITES)]
    OracleTooLarge(usize),

    #[error("spectral propagator failed: {0}")]
    Propagator(String),

    #[error("bad series data: {0}")]
    Data(String),

    #[error("insufficient data: {0}")]
    Insufficient(String),
}
