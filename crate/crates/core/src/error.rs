use thiserror::Error;

use crate::convex::RegionError;
use crate::specfun::DomainError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SaError {
    #[error(transparent)]
    Region(#[from] RegionError),

    #[error("truncation schedule failed at t = {t}: {source}")]
    Schedule { t: usize, source: RegionError },

    #[error("poisoned trajectory at t = {t}, z = {z:?}: non-finite {what}")]
    Poisoned { t: usize, z: Vec<f64>, what: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error(transparent)]
    Domain(#[from] DomainError),

    #[error("diagnostics: {0}")]
    Diagnostics(String),
}

impl SaError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        SaError::InvalidParameter(msg.into())
    }

    /// Time step attached to the error, when there is one.
    pub fn step(&self) -> Option<usize> {
        match self {
            SaError::Schedule { t, .. } | SaError::Poisoned { t, .. } => Some(*t),
            _ => None,
        }
    }
}

pub type Result<T, E = SaError> = std::result::Result<T, E>;
