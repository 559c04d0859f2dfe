use thiserror::Error;

use crate::tpm::Direction;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Validation,
    Numerical,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix dimension {0} exceeds the supported maximum of 64")]
    DimensionTooLarge(usize),

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("matrix contains non-finite entries")]
    NonFinite,

    #[error("{what} is not Hermitian (max deviation {deviation:e})")]
    NonHermitian { what: &'static str, deviation: f64 },

    #[error("density matrix trace is {trace}, expected 1")]
    BadTrace { trace: f64 },

    #[error("operator is not unitary (max |U^dag U - I| = {deviation:e})")]
    NotUnitary { deviation: f64 },

    #[error("thermal energy must be positive or +inf, got {0}")]
    InvalidTemperature(f64),

    #[error("invalid population vector: {0}")]
    InvalidPopulations(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("observable {0} is not diagonal in the energy eigenbasis; only observables commuting with the final Hamiltonian can be decomposed into transition probabilities")]
    NonDiagonalObservable(String),

    #[error("under-determined system: {equations} equations for {unknowns} unknowns")]
    UnderDetermined { equations: usize, unknowns: usize },

    #[error("rank-deficient system: rank {rank} < {unknowns}; deficient directions {directions:?}")]
    RankDeficient {
        rank: usize,
        unknowns: usize,
        directions: Vec<Vec<f64>>,
    },

    #[error("no populations for direction {direction} at kT = {kt_pev} peV")]
    MissingPopulations { direction: Direction, kt_pev: f64 },

    #[error("unbalanceable matrix: {axis} {index} has no entry above the floor")]
    Unbalanceable { axis: &'static str, index: usize },

    #[error("MLE projection did not converge within {max_iter} iterations (last change {last_change:e})")]
    NotConverged { max_iter: usize, last_change: f64 },

    #[error("degenerate fit: {points} usable points, at least 3 required")]
    FitDegenerate { points: usize },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Io(_) => ErrorClass::Io,
            Error::NotUnitary { .. }
            | Error::RankDeficient { .. }
            | Error::Unbalanceable { .. }
            | Error::NotConverged { .. }
            | Error::FitDegenerate { .. } => ErrorClass::Numerical,
            _ => ErrorClass::Validation,
        }
    }

    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}
