use thiserror::Error;

use crate::solvers::SolveReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("resource error: {0}")]
    Resource(String),

    #[error("solver did not converge after {} iterations (residual {:.3e})", .0.iterations, .0.final_gradient_norm)]
    NonConvergence(SolveReport),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("linear solver error: {0}")]
    LinearSolver(String),

    #[error("coverage error: {0}")]
    Coverage(String),

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("ensemble error: {failed} of {total} realizations failed; first failures: {diagnostics:?}")]
    Ensemble {
        failed: usize,
        total: usize,
        diagnostics: Vec<String>,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors produced by the numerical solvers or the ensemble
    /// driver, as opposed to bad input.
    pub fn is_solver_error(&self) -> bool {
        matches!(
            self,
            Error::NonConvergence(_)
                | Error::Numerical(_)
                | Error::LinearSolver(_)
                | Error::Ensemble { .. }
                | Error::Consistency(_)
        )
    }
}
