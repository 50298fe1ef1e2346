//! Splitting solver for l1-regularized least squares together with a scalar
//! particle predictor of its per-iteration error.
//!
//! The library has two halves that mirror each other:
//!
//! * [`dr`] runs the matrix iteration on sampled instances of `y = A x + v`
//!   and records the per-iteration squared error;
//! * [`evolution`] advances a scalar particle ensemble through the decoupled
//!   version of the same update ([`cgmt`]), predicting that error without
//!   touching any matrix.
//!
//! Everything is deterministic given the seeds in [`model::SystemConfig`]:
//! parallel reductions use fixed chunking so results are identical across
//! thread counts.

pub mod cgmt;
pub mod dr;
pub mod error;
pub mod evolution;
pub mod model;
pub mod prox;
pub mod rng;

pub use cgmt::{
    inner_objective, j_value, predicted_mse, s_hat, scalar_objective, solve_saddle, SaddlePoint,
    SampleSet, ScalarSample, SearchOptions,
};
pub use dr::{
    dr_run, dr_solve, dr_step, ista_reference, lasso_objective, optimality_residual,
    spectral_norm_sq, DrState, IterationRecord, RunMetrics,
};
pub use error::{CoreError, Result};
pub use evolution::{
    init_ensemble, ks_distance, se_run, se_run_with, se_step, se_step_with_sample, EvolutionTrace,
    HMode, ScalarEnsemble, ScalarParams, SeStepOutcome, TraceRow,
};
pub use model::{
    empirical_mse, sample_instance, sample_prior, Prior, ProblemInstance, SystemConfig, RHO_MARGIN,
};
pub use prox::{
    prox_separable, soft_threshold, FactorizationPath, Regularizer, SquaredLossProx,
};
pub use rng::{
    derive_seed, seeded_rng, standard_normal_vec, DOMAIN_ENSEMBLE_INIT, DOMAIN_ITERATION_NOISE,
    DOMAIN_TRIAL,
};
