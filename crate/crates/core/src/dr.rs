//! The splitting iteration on sampled instances, its objective and
//! optimality metrics, and an independent proximal-gradient reference solver
//! used to cross-check fixed points.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};

use crate::error::{CoreError, Result};
use crate::model::{empirical_mse, ProblemInstance, SystemConfig};
use crate::prox::{prox_separable, Regularizer, SquaredLossProx};

/// Iterate pair of the splitting scheme.
#[derive(Clone, Debug)]
pub struct DrState {
    /// Primal estimate `s^(k)`; zero until the first step.
    pub s: DVector<f64>,
    /// Driving sequence `z^(k)`.
    pub z: DVector<f64>,
    /// Steps applied so far.
    pub k: usize,
}

impl DrState {
    /// Zero initialization: `z^(0) = 0`.
    pub fn initial(n: usize) -> Self {
        Self {
            s: DVector::zeros(n),
            z: DVector::zeros(n),
            k: 0,
        }
    }
}

/// One relaxed step:
/// `s <- prox_loss(z)`, `z <- z + rho (prox_reg(2 s - z) - s)`.
pub fn dr_step(
    state: &DrState,
    prox: &SquaredLossProx,
    reg: &Regularizer,
    lambda: f64,
    rho: f64,
) -> Result<DrState> {
    let s = prox.apply(&state.z)?;
    let reflected = &s * 2.0 - &state.z;
    let theta = prox.gamma() * lambda;
    let reg_point = prox_separable(reg, &reflected, theta);
    let z = &state.z + (reg_point - &s) * rho;
    let k = state.k + 1;
    if s.iter().any(|v| !v.is_finite()) || z.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::NonFiniteIterate { iteration: k });
    }
    Ok(DrState { s, z, k })
}

/// Per-iteration observations of a full run.
#[derive(Clone, Debug)]
pub struct IterationRecord {
    /// Iteration index, starting at 1.
    pub k: usize,
    /// Per-coordinate squared distance to the ground truth.
    pub mse: f64,
    /// Lasso objective at `s^(k)`.
    pub objective: f64,
    pub wall_time: Duration,
}

#[derive(Clone, Debug, Default)]
pub struct RunMetrics {
    pub records: Vec<IterationRecord>,
}

/// Runs exactly `iterations` steps with the l1 regularizer, recording error
/// and objective after each one.
pub fn dr_run(
    instance: &ProblemInstance,
    config: &SystemConfig,
    iterations: usize,
) -> Result<RunMetrics> {
    config.validate()?;
    let prox = SquaredLossProx::new(instance.a.clone(), &instance.y, config.gamma)?;
    let reg = Regularizer::L1;
    let mut state = DrState::initial(instance.n());
    let mut records = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let start = Instant::now();
        state = dr_step(&state, &prox, &reg, config.lambda, config.rho)?;
        let wall_time = start.elapsed();
        records.push(IterationRecord {
            k: state.k,
            mse: empirical_mse(&state.s, &instance.x)?,
            objective: lasso_objective(instance, config.lambda, &state.s),
            wall_time,
        });
    }
    Ok(RunMetrics { records })
}

/// Runs until the optimality residual drops to `tol`, or errs after
/// `max_iterations`. Returns the estimate and the steps spent.
///
/// Convergence is measured at the regularizer prox output (the thresholded
/// point of each step) rather than at `s^(k)`: both converge to the same
/// minimizer, but the thresholded point carries exact zeros, so its
/// subgradient residual actually reaches zero in floating point.
pub fn dr_solve(
    instance: &ProblemInstance,
    lambda: f64,
    gamma: f64,
    rho: f64,
    max_iterations: usize,
    tol: f64,
) -> Result<(DVector<f64>, usize)> {
    let prox = SquaredLossProx::new(instance.a.clone(), &instance.y, gamma)?;
    let reg = Regularizer::L1;
    let theta = gamma * lambda;
    let mut z = DVector::zeros(instance.n());
    let mut residual = f64::INFINITY;
    for k in 1..=max_iterations {
        let s = prox.apply(&z)?;
        let u = prox_separable(&reg, &(&s * 2.0 - &z), theta);
        z += (&u - &s) * rho;
        if u.iter().any(|v| !v.is_finite()) || z.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::NonFiniteIterate { iteration: k });
        }
        residual = optimality_residual(instance, lambda, &u);
        if residual <= tol {
            return Ok((u, k));
        }
    }
    Err(CoreError::DidNotConverge {
        iterations: max_iterations,
        residual,
        tol,
    })
}

/// `(1/2)||y - A s||^2 + lambda ||s||_1`.
pub fn lasso_objective(instance: &ProblemInstance, lambda: f64, s: &DVector<f64>) -> f64 {
    let r = &instance.y - &instance.a * s;
    let l1: f64 = s.iter().map(|v| v.abs()).sum();
    0.5 * r.norm_squared() + lambda * l1
}

/// Sup-norm distance of the negative gradient from the l1 subdifferential:
/// zero exactly at minimizers of the lasso objective.
pub fn optimality_residual(instance: &ProblemInstance, lambda: f64, s: &DVector<f64>) -> f64 {
    let grad = instance.a.tr_mul(&(&instance.a * s - &instance.y));
    subgradient_residual(&grad, s, lambda)
}

fn subgradient_residual(grad: &DVector<f64>, s: &DVector<f64>, lambda: f64) -> f64 {
    let mut worst = 0.0f64;
    for (g, v) in grad.iter().zip(s.iter()) {
        let r = if *v > 0.0 {
            (g + lambda).abs()
        } else if *v < 0.0 {
            (g - lambda).abs()
        } else {
            (g.abs() - lambda).max(0.0)
        };
        worst = worst.max(r);
    }
    worst
}

/// Largest squared singular value of `a`, by power iteration on `A^T A`.
pub fn spectral_norm_sq(a: &DMatrix<f64>) -> f64 {
    let n = a.ncols();
    let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut lambda_prev = 0.0f64;
    for _ in 0..500 {
        let u = a.tr_mul(&(a * &v));
        let lambda = v.dot(&u);
        let norm = u.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v = u / norm;
        if (lambda - lambda_prev).abs() <= 1e-13 * lambda.abs().max(1.0) {
            return lambda;
        }
        lambda_prev = lambda;
    }
    lambda_prev
}

/// Independent reference solver: proximal gradient (iterative soft
/// thresholding) with step `1 / ||A||_2^2`, run to the requested optimality
/// residual. Slow but built from different primitives than the splitting
/// iteration, which is the point.
pub fn ista_reference(
    instance: &ProblemInstance,
    lambda: f64,
    max_iterations: usize,
    tol: f64,
) -> Result<DVector<f64>> {
    let lipschitz = spectral_norm_sq(&instance.a).max(1e-12);
    let step = 1.0 / lipschitz;
    let theta = step * lambda;
    let mut s = DVector::zeros(instance.n());
    let mut grad = instance.a.tr_mul(&(&instance.a * &s - &instance.y));
    let mut residual = f64::INFINITY;
    for it in 1..=max_iterations {
        s = (&s - &grad * step).map(|t| crate::prox::soft_threshold(t, theta));
        grad = instance.a.tr_mul(&(&instance.a * &s - &instance.y));
        residual = subgradient_residual(&grad, &s, lambda);
        if residual <= tol {
            return Ok(s);
        }
        if it % 64 == 0 && s.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::NonFiniteIterate { iteration: it });
        }
    }
    Err(CoreError::DidNotConverge {
        iterations: max_iterations,
        residual,
        tol,
    })
}
