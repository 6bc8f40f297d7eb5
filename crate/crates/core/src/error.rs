use thiserror::Error;

use crate::geometry::GeometryError;
use crate::qpsolver::{QpError, QpStatus};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error("solver returned {status:?} while {context}")]
    SolverFailure { status: QpStatus, context: String },
    #[error("active rows are rank deficient (LICQ violated)")]
    DualDegenerate,
    #[error("dual value {dual} disagrees with primal value {primal}")]
    DualMismatch { primal: f64, dual: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("safety margin violated for pair ({i}, {j}): h = {h:e}")]
    SafetyViolated { i: usize, j: usize, h: f64 },
    #[error("fleet is empty")]
    EmptyFleet,
    #[error("active set switches near the sample time")]
    SwitchNearby,
    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn solver(status: QpStatus, context: impl Into<String>) -> Self {
        Error::SolverFailure { status, context: context.into() }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
