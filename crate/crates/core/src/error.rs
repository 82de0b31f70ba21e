use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    /// An argument lies outside the domain of the requested function.
    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    /// A root-finding step could not bracket a sign change.
    #[error("no root found in {op}: {detail}")]
    NoRoot { op: &'static str, detail: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Iterative solver hit its iteration cap before meeting tolerances.
    #[error("solver did not converge after {iterations} iterations (feasibility {feas_residual:.3e}, dual {dual_residual:.3e})")]
    NonConvergence {
        iterations: usize,
        feas_residual: f64,
        dual_residual: f64,
        /// Best iterate seen, so callers can still inspect it.
        best: Vec<f64>,
    },

    /// The measurement system could not be satisfied (typically rank deficiency).
    #[error("infeasible system: {0}")]
    Infeasible(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn domain(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Domain {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn no_root(op: &'static str, detail: impl Into<String>) -> Self {
        Error::NoRoot {
            op,
            detail: detail.into(),
        }
    }

    /// True for failures of a numerical procedure (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NoRoot { .. } | Error::NonConvergence { .. } | Error::Infeasible(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
