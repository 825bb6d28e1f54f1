use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Pipeline stage that rejected an identification attempt.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Selection,
    Hankel,
    Power,
    LinearSolve,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Selection => "selection",
            Stage::Hankel => "hankel",
            Stage::Power => "power",
            Stage::LinearSolve => "linear-solve",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which observable moment matrix turned out singular during bootstrapping.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CMatrixKind {
    /// C̃ over (B, A).
    BA,
    /// C̃ over (B', A).
    BpA,
}

impl fmt::Display for CMatrixKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CMatrixKind::BA => f.write_str("C_BA"),
            CMatrixKind::BpA => f.write_str("C_B'A"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("bit index {index} out of range for n = {n}")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("k = {0} exceeds the brute-force alignment limit of 8")]
    TooManyComponents(usize),

    #[error("infeasible parameters: {0}")]
    Infeasible(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("ground sets overlap: {0}")]
    GroundOverlap(String),

    #[error("family selection failed: best score {score:e} below threshold {threshold:e}")]
    SelectionFailed { score: f64, threshold: f64 },

    #[error("no row triple passed family selection")]
    Exhausted,

    #[error("{which} is numerically singular (sigma_k = {sigma:e})")]
    SingularC { which: CMatrixKind, sigma: f64 },

    #[error("bootstrap state is missing moment vector v_{0}")]
    MissingMoment(usize),

    #[error("Hankel gate failed: second-smallest eigenvalue {lambda2:e} below {threshold:e}")]
    HankelGate { lambda2: f64, threshold: f64 },

    #[error("degenerate Hankel matrix (sigma_k = {sigma:e})")]
    DegenerateHankel { sigma: f64 },

    #[error("pencil eigenvalue has imaginary part {imag:e}")]
    ComplexEigenvalue { imag: f64 },

    #[error("Vandermonde matrix is singular (min support gap {gap:e})")]
    SingularVandermonde { gap: f64 },

    #[error("mixing weight {index} is not positive ({value:e})")]
    ZeroWeight { index: usize, value: f64 },

    #[error("recovered A matrix is singular")]
    SingularA,

    #[error("family matrix used for row recovery is singular")]
    SingularFamilyMatrix,

    #[error("duplicate entries in a vector that must be separated")]
    DuplicateEntries,

    #[error("column selection failed its a posteriori bound: {achieved:e} < {required:e}")]
    CheckFailed { achieved: f64, required: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stage attribution for gated failures; `None` for usage or I/O errors.
    pub fn stage(&self) -> Option<Stage> {
        match self {
            Error::SelectionFailed { .. } | Error::Exhausted => Some(Stage::Selection),
            Error::HankelGate { .. } => Some(Stage::Hankel),
            Error::DegenerateHankel { .. } | Error::ComplexEigenvalue { .. } => Some(Stage::Power),
            Error::SingularC { .. }
            | Error::SingularVandermonde { .. }
            | Error::ZeroWeight { .. }
            | Error::SingularA
            | Error::SingularFamilyMatrix => Some(Stage::LinearSolve),
            _ => None,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
