use thiserror::Error;

/// Errors surfaced by the numerical routines.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("length mismatch for {what}: expected {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite input in {0}")]
    NonFiniteInput(String),

    #[error("non-finite iterate at iteration {iteration}")]
    NonFiniteIterate { iteration: usize },

    #[error("factorization failed: {diagnostic}")]
    Factorization { diagnostic: String },

    #[error("sample ensemble is empty")]
    EmptyEnsemble,

    #[error("empty sample for {0}")]
    EmptySample(&'static str),

    #[error(
        "saddle search: optimum not interior ({axis} maximizer stayed at the upper edge after \
         {expansions} bracket expansions, hi={hi:.6e})"
    )]
    OptimumNotInterior {
        axis: &'static str,
        hi: f64,
        expansions: usize,
    },

    #[error("no convergence after {iterations} iterations (residual {residual:.3e} > tol {tol:.3e})")]
    DidNotConverge {
        iterations: usize,
        residual: f64,
        tol: f64,
    },
}

pub type Result<T> = std::result::Result<T, CoreError>;
