//! Experiment orchestration: solver trials, predictor runs, and gamma sweeps,
//! all reduced to a common row shape.
//!
//! Determinism: every randomized unit (trial `t`, the particle ensemble) gets
//! its seed from the master seed through a labeled derivation, trials are
//! aggregated in index order after the parallel fan-out, and the core's
//! reductions are chunk-stable - so output bytes depend only on the
//! configuration, not on scheduling or thread count.

use std::time::{Duration, Instant};

use drasym_core::{
    derive_seed, dr_run, sample_instance, se_run_with, CoreError, SearchOptions, SystemConfig,
    DOMAIN_TRIAL,
};
use rayon::prelude::*;
use thiserror::Error;

use crate::config::{ExperimentConfig, RunMode};

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("trial {index}: {source}")]
    Trial { index: usize, source: CoreError },
    #[error("prediction at gamma = {gamma}: {source}")]
    Prediction { gamma: f64, source: CoreError },
}

/// One output record: iteration index, the gamma it was run at, and whichever
/// of the empirical/predicted quantities the mode produced.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub k: usize,
    pub gamma: f64,
    pub mse_empirical_mean: Option<f64>,
    pub mse_empirical_stderr: Option<f64>,
    pub mse_predicted: Option<f64>,
    pub alpha_star: Option<f64>,
    pub beta_star: Option<f64>,
}

impl ResultRow {
    fn empty(k: usize, gamma: f64) -> Self {
        ResultRow {
            k,
            gamma,
            mse_empirical_mean: None,
            mse_empirical_stderr: None,
            mse_predicted: None,
            alpha_star: None,
            beta_star: None,
        }
    }
}

/// Per-iteration empirical mean and standard error across trials.
struct EmpiricalCurve {
    mean: Vec<f64>,
    stderr: Option<Vec<f64>>,
}

/// Runs `system.trials` independent solver instances in parallel and averages
/// the per-iteration squared error. Trial `t` is seeded by
/// `derive_seed(seed, DOMAIN_TRIAL, t)`; any failing trial aborts the run
/// with its index.
fn empirical_curve(system: &SystemConfig, iterations: usize) -> Result<EmpiricalCurve, RunnerError> {
    let per_trial: Vec<Vec<f64>> = (0..system.trials)
        .into_par_iter()
        .map(|t| {
            let seed = derive_seed(system.seed, DOMAIN_TRIAL, t as u64);
            let instance =
                sample_instance(system, seed).map_err(|source| RunnerError::Trial { index: t, source })?;
            let metrics = dr_run(&instance, system, iterations)
                .map_err(|source| RunnerError::Trial { index: t, source })?;
            Ok(metrics.records.into_iter().map(|r| r.mse).collect())
        })
        .collect::<Result<_, RunnerError>>()?;

    let count = per_trial.len() as f64;
    let mut mean = vec![0.0; iterations];
    for trial in &per_trial {
        for (acc, &v) in mean.iter_mut().zip(trial) {
            *acc += v;
        }
    }
    for v in &mut mean {
        *v /= count;
    }
    if per_trial.len() < 2 {
        return Ok(EmpiricalCurve { mean, stderr: None });
    }
    let mut var = vec![0.0; iterations];
    for trial in &per_trial {
        for ((acc, &v), &mu) in var.iter_mut().zip(trial).zip(&mean) {
            let d = v - mu;
            *acc += d * d;
        }
    }
    let stderr = var
        .into_iter()
        .map(|s| (s / (count - 1.0) / count).sqrt())
        .collect();
    Ok(EmpiricalCurve {
        mean,
        stderr: Some(stderr),
    })
}

/// Solver-only run: one row per iteration at the configured gamma.
pub fn run_empirical(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>, RunnerError> {
    let system = &cfg.system;
    let curve = empirical_curve(system, system.iterations)?;
    Ok((1..=system.iterations)
        .map(|k| ResultRow {
            mse_empirical_mean: Some(curve.mean[k - 1]),
            mse_empirical_stderr: curve.stderr.as_ref().map(|s| s[k - 1]),
            ..ResultRow::empty(k, system.gamma)
        })
        .collect())
}

/// Predictor-only run: one row per iteration with the saddle coordinates.
pub fn run_prediction(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>, RunnerError> {
    let system = &cfg.system;
    let trace = se_run_with(system, system.iterations, cfg.h_mode, &SearchOptions::default())
        .map_err(|source| RunnerError::Prediction {
            gamma: system.gamma,
            source,
        })?;
    Ok(trace
        .rows
        .into_iter()
        .map(|row| ResultRow {
            mse_predicted: Some(row.predicted_mse),
            alpha_star: Some(row.alpha_star),
            beta_star: Some(row.beta_star),
            ..ResultRow::empty(row.k, system.gamma)
        })
        .collect())
}

/// Both halves on the same parameters, merged per iteration.
pub fn run_both(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>, RunnerError> {
    let empirical = run_empirical(cfg)?;
    let predicted = run_prediction(cfg)?;
    Ok(empirical
        .into_iter()
        .zip(predicted)
        .map(|(e, p)| {
            debug_assert_eq!(e.k, p.k);
            ResultRow {
                mse_empirical_mean: e.mse_empirical_mean,
                mse_empirical_stderr: e.mse_empirical_stderr,
                ..p
            }
        })
        .collect())
}

/// A sweep's rows plus the per-snapshot argmin of the predicted error.
#[derive(Clone, Debug)]
pub struct SweepOutcome {
    pub rows: Vec<ResultRow>,
    /// `(k, gamma)` pairs: the grid gamma minimizing predicted MSE at each
    /// snapshot iteration.
    pub argmin_per_snapshot: Vec<(usize, f64)>,
}

/// Runs the predictor (and optionally the solver) once per grid gamma and
/// reports the snapshot iterations, rows sorted by `(gamma, k)`.
pub fn sweep_gamma(cfg: &ExperimentConfig) -> Result<SweepOutcome, RunnerError> {
    let deepest = *cfg
        .snapshot_iterations
        .iter()
        .max()
        .expect("validated: sweep snapshots nonempty");
    let mut rows = Vec::with_capacity(cfg.gamma_grid.len() * cfg.snapshot_iterations.len());
    // (snapshot k) -> (best predicted mse, gamma) running minimum.
    let mut best: Vec<(f64, f64)> = vec![(f64::INFINITY, f64::NAN); cfg.snapshot_iterations.len()];

    for &gamma in &cfg.gamma_grid {
        let mut system = cfg.system.clone();
        system.gamma = gamma;
        let trace = se_run_with(&system, deepest, cfg.h_mode, &SearchOptions::default())
            .map_err(|source| RunnerError::Prediction { gamma, source })?;
        let empirical = if cfg.sweep_empirical {
            Some(empirical_curve(&system, deepest)?)
        } else {
            None
        };
        for (slot, &k) in cfg.snapshot_iterations.iter().enumerate() {
            let predicted = &trace.rows[k - 1];
            debug_assert_eq!(predicted.k, k);
            let mut row = ResultRow {
                mse_predicted: Some(predicted.predicted_mse),
                alpha_star: Some(predicted.alpha_star),
                beta_star: Some(predicted.beta_star),
                ..ResultRow::empty(k, gamma)
            };
            if let Some(curve) = &empirical {
                row.mse_empirical_mean = Some(curve.mean[k - 1]);
                row.mse_empirical_stderr = curve.stderr.as_ref().map(|s| s[k - 1]);
            }
            if predicted.predicted_mse < best[slot].0 {
                best[slot] = (predicted.predicted_mse, gamma);
            }
            rows.push(row);
        }
    }
    let argmin_per_snapshot = cfg
        .snapshot_iterations
        .iter()
        .zip(&best)
        .map(|(&k, &(_, gamma))| (k, gamma))
        .collect();
    Ok(SweepOutcome {
        rows,
        argmin_per_snapshot,
    })
}

/// Everything a finished run hands to the reporting layer.
#[derive(Clone, Debug)]
pub struct ExecutionReport {
    pub rows: Vec<ResultRow>,
    /// Present in sweep mode only.
    pub argmin_per_snapshot: Option<Vec<(usize, f64)>>,
    pub wall: Duration,
}

/// Dispatches on the configured mode.
pub fn execute(cfg: &ExperimentConfig) -> Result<ExecutionReport, RunnerError> {
    let start = Instant::now();
    let (rows, argmin) = match cfg.mode {
        RunMode::Empirical => (run_empirical(cfg)?, None),
        RunMode::Predict => (run_prediction(cfg)?, None),
        RunMode::Both => (run_both(cfg)?, None),
        RunMode::SweepGamma => {
            let outcome = sweep_gamma(cfg)?;
            (outcome.rows, Some(outcome.argmin_per_snapshot))
        }
    };
    Ok(ExecutionReport {
        rows,
        argmin_per_snapshot: argmin,
        wall: start.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    fn tiny(extra: &str) -> ExperimentConfig {
        parse_config(&format!(
            "n = 40\nm = 28\niterations = 8\ntrials = 4\nmc_particles = 400\n{extra}"
        ))
        .unwrap()
    }

    #[test]
    fn empirical_rows_have_means_and_stderr() {
        let rows = run_empirical(&tiny("")).unwrap();
        assert_eq!(rows.len(), 8);
        assert_eq!(rows[0].k, 1);
        assert!(rows.iter().all(|r| r.mse_empirical_mean.unwrap() > 0.0));
        assert!(rows.iter().all(|r| r.mse_empirical_stderr.unwrap() > 0.0));
        assert!(rows.iter().all(|r| r.mse_predicted.is_none()));
    }

    #[test]
    fn single_trial_has_no_stderr() {
        let mut cfg = tiny("");
        cfg.system.trials = 1;
        let rows = run_empirical(&cfg).unwrap();
        assert!(rows.iter().all(|r| r.mse_empirical_stderr.is_none()));
        assert!(rows.iter().all(|r| r.mse_empirical_mean.is_some()));
    }

    #[test]
    fn both_mode_merges_per_iteration() {
        let rows = run_both(&tiny("")).unwrap();
        assert_eq!(rows.len(), 8);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.k, i + 1);
            assert!(row.mse_empirical_mean.is_some());
            assert!(row.mse_predicted.is_some());
            assert!(row.alpha_star.is_some());
            assert!(row.beta_star.is_some());
        }
    }

    #[test]
    fn degenerate_sweep_equals_prediction_at_snapshots() {
        let sweep_cfg = tiny("mode = sweep\ngamma_grid = 10\nsnapshot_iterations = 2,5\n");
        let outcome = sweep_gamma(&sweep_cfg).unwrap();
        let predict_rows = run_prediction(&tiny("")).unwrap();
        assert_eq!(outcome.rows.len(), 2);
        for row in &outcome.rows {
            let reference = &predict_rows[row.k - 1];
            assert_eq!(row.mse_predicted, reference.mse_predicted);
            assert_eq!(row.alpha_star, reference.alpha_star);
            assert_eq!(row.gamma, 10.0);
        }
        assert_eq!(outcome.argmin_per_snapshot, vec![(2, 10.0), (5, 10.0)]);
    }

    #[test]
    fn sweep_rows_sorted_by_gamma_then_k() {
        let cfg = tiny("mode = sweep\ngamma_grid = 12,4,8\nsnapshot_iterations = 3,1\n");
        let outcome = sweep_gamma(&cfg).unwrap();
        let key: Vec<(u64, usize)> = outcome
            .rows
            .iter()
            .map(|r| (r.gamma.to_bits(), r.k))
            .collect();
        let mut sorted = key.clone();
        sorted.sort_unstable();
        assert_eq!(key, sorted);
        assert_eq!(outcome.rows.len(), 6);
    }

    #[test]
    fn sweep_with_empirical_overlay_fills_both_sides() {
        let cfg = tiny("mode = sweep\ngamma_grid = 5,10\nsnapshot_iterations = 4\nsweep_empirical = true\n");
        let outcome = sweep_gamma(&cfg).unwrap();
        assert!(outcome
            .rows
            .iter()
            .all(|r| r.mse_empirical_mean.is_some() && r.mse_predicted.is_some()));
    }

    #[test]
    fn trial_failures_carry_the_index() {
        // Sidestep the parser (which would reject this) so every trial fails
        // inside dr_run; whichever trial reports first names its index.
        let mut cfg = tiny("");
        cfg.system.iterations = 0;
        let err = run_empirical(&cfg).unwrap_err();
        let text = err.to_string();
        assert!(text.starts_with("trial "), "{text}");
    }
}
