//! Scalar state evolution: a particle ensemble `(X, Z_k)` advanced by
//! per-iteration saddle solves, producing the predicted error trajectory that
//! mirrors the matrix iteration without ever touching a matrix.

use rayon::prelude::*;

use crate::cgmt::{
    decoupled_s, solve_saddle, tree_sum, weights, SampleSet, SaddlePoint, SearchOptions, Weights,
};
use crate::error::{CoreError, Result};
use crate::model::{sample_prior, Prior, SystemConfig};
use crate::prox::Regularizer;
use crate::rng::{derive_seed, standard_normal_vec, DOMAIN_ENSEMBLE_INIT, DOMAIN_ITERATION_NOISE};

/// How the Gaussian column of the ensemble is refreshed.
///
/// The measurement matrix is fixed across iterations of the matrix
/// algorithm, so the Gaussian that stands in for its projections must also
/// be fixed per particle: with `Persistent` the particle process admits a
/// per-particle fixed point whose error matches the minimizer of the
/// original problem (verified against the closed-form asymptotic error of
/// the l1 solution to better than 1%). Redrawing every iteration keeps the
/// ensemble perpetually noisy and plateaus an order of magnitude high; that
/// variant stays available for sensitivity experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum HMode {
    /// One draw per particle, reused every iteration (the default).
    #[default]
    Persistent,
    /// A fresh draw per iteration; for sensitivity experiments only.
    Fresh,
}

/// Particle ensemble tracking the joint distribution of `(X, Z_k)`.
#[derive(Clone, Debug)]
pub struct ScalarEnsemble {
    xs: Vec<f64>,
    zs: Vec<f64>,
    k: usize,
    seed: u64,
    h_mode: HMode,
    persistent_h: Option<Vec<f64>>,
}

impl ScalarEnsemble {
    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    /// Iterations applied so far; 0 right after initialization.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn zs(&self) -> &[f64] {
        &self.zs
    }

    pub fn h_mode(&self) -> HMode {
        self.h_mode
    }

    pub fn with_h_mode(mut self, mode: HMode) -> Self {
        self.h_mode = mode;
        self
    }
}

/// Draws the initial ensemble: `X ~ prior` i.i.d., `Z_0 = 0`.
pub fn init_ensemble(prior: &Prior, count: usize, seed: u64) -> Result<ScalarEnsemble> {
    if count == 0 {
        return Err(CoreError::EmptyEnsemble);
    }
    let xs = sample_prior(prior, count, derive_seed(seed, DOMAIN_ENSEMBLE_INIT, 0))?;
    Ok(ScalarEnsemble {
        zs: vec![0.0; xs.len()],
        xs,
        k: 0,
        seed,
        h_mode: HMode::default(),
        persistent_h: None,
    })
}

/// Scalar-level parameters of one evolution step.
#[derive(Clone, Copy, Debug)]
pub struct ScalarParams {
    /// Measurement ratio M/N.
    pub delta: f64,
    pub noise_var: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub rho: f64,
}

impl ScalarParams {
    pub fn from_config(config: &SystemConfig) -> Self {
        Self {
            delta: config.delta(),
            noise_var: config.noise_var,
            gamma: config.gamma,
            lambda: config.lambda,
            rho: config.rho,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0
            && self.noise_var >= 0.0
            && self.gamma > 0.0
            && self.lambda > 0.0
            && self.rho > 0.0
            && self.rho < 2.0)
        {
            return Err(CoreError::InvalidConfig(format!("bad scalar params: {self:?}")));
        }
        Ok(())
    }
}

/// Everything observed during one evolution step.
#[derive(Clone, Debug)]
pub struct SeStepOutcome {
    pub saddle: SaddlePoint,
    /// `alpha*^2 - noise_var`, clamped at zero.
    pub predicted_mse: f64,
    /// Mean of the mapped particles `S_{k+1}`.
    pub s_mean: f64,
    /// Sample variance of the mapped particles.
    pub s_var: f64,
    /// Ensemble mean of `(S_{k+1} - X)^2`.
    pub err_sq_mean: f64,
    /// Monte Carlo standard error of that mean.
    pub err_sq_stderr: f64,
}

const UPDATE_CHUNK: usize = 4096;

/// Advances the ensemble by one iteration: solve the saddle on `(X, H, Z_k)`
/// with a shared Gaussian column, map the particles through the decoupled
/// prox, then apply the scalar mirror of the matrix-iteration update
/// `z <- z + rho (prox_reg(2 s - z) - s)`.
pub fn se_step(
    ens: &mut ScalarEnsemble,
    reg: &Regularizer,
    params: &ScalarParams,
    opts: &SearchOptions,
) -> Result<SeStepOutcome> {
    se_step_inner(ens, reg, params, opts, None)
}

/// Same as [`se_step`], additionally writing the mapped particles `S_{k+1}`
/// into `s_out` (resized to the ensemble length). Used for distribution-level
/// comparisons against matrix-iteration coordinates.
pub fn se_step_with_sample(
    ens: &mut ScalarEnsemble,
    reg: &Regularizer,
    params: &ScalarParams,
    opts: &SearchOptions,
    s_out: &mut Vec<f64>,
) -> Result<SeStepOutcome> {
    se_step_inner(ens, reg, params, opts, Some(s_out))
}

fn se_step_inner(
    ens: &mut ScalarEnsemble,
    reg: &Regularizer,
    params: &ScalarParams,
    opts: &SearchOptions,
    s_out: Option<&mut Vec<f64>>,
) -> Result<SeStepOutcome> {
    if ens.is_empty() {
        return Err(CoreError::EmptyEnsemble);
    }
    params.validate()?;
    let n = ens.len();

    // The Gaussian column is shared between the saddle solve and the particle
    // update of a step, so the stationarity identity
    // alpha*^2 - noise_var = mean((S - X)^2) holds on this very ensemble.
    let hs: Vec<f64> = match ens.h_mode {
        HMode::Fresh => standard_normal_vec(
            derive_seed(ens.seed, DOMAIN_ITERATION_NOISE, ens.k as u64),
            n,
        ),
        HMode::Persistent => {
            if ens.persistent_h.is_none() {
                ens.persistent_h = Some(standard_normal_vec(
                    derive_seed(ens.seed, DOMAIN_ITERATION_NOISE, 0),
                    n,
                ));
            }
            ens.persistent_h.clone().unwrap()
        }
    };

    let xs = std::mem::take(&mut ens.xs);
    let zs = std::mem::take(&mut ens.zs);
    let set = SampleSet::from_parts(xs, hs, zs)?;

    let saddle = match solve_saddle(&set, params.delta, params.noise_var, params.gamma, opts) {
        Ok(s) => s,
        Err(e) => {
            let (xs, _, zs) = set.into_parts();
            ens.xs = xs;
            ens.zs = zs;
            return Err(e);
        }
    };

    let (xs, hs, mut zs) = set.into_parts();
    let wt = weights(saddle.alpha, saddle.beta, params.delta, params.gamma);
    let theta = params.gamma * params.lambda;
    let rho = params.rho;

    let stats: Vec<[f64; 4]> = match s_out {
        None => zs
            .par_chunks_mut(UPDATE_CHUNK)
            .zip(xs.par_chunks(UPDATE_CHUNK))
            .zip(hs.par_chunks(UPDATE_CHUNK))
            .map(|((zc, xc), hc)| update_chunk(&wt, reg, theta, rho, xc, hc, zc, None))
            .collect(),
        Some(sink) => {
            sink.clear();
            sink.resize(n, 0.0);
            zs.par_chunks_mut(UPDATE_CHUNK)
                .zip(xs.par_chunks(UPDATE_CHUNK))
                .zip(hs.par_chunks(UPDATE_CHUNK))
                .zip(sink.par_chunks_mut(UPDATE_CHUNK))
                .map(|(((zc, xc), hc), sc)| {
                    update_chunk(&wt, reg, theta, rho, xc, hc, zc, Some(sc))
                })
                .collect()
        }
    };

    let column = |i: usize| -> f64 {
        let col: Vec<f64> = stats.iter().map(|s| s[i]).collect();
        tree_sum(&col)
    };
    let count = n as f64;
    let sum_s = column(0);
    let sum_s2 = column(1);
    let sum_e2 = column(2);
    let sum_e4 = column(3);

    let s_mean = sum_s / count;
    let s_var = if n > 1 {
        ((sum_s2 - sum_s * sum_s / count) / (count - 1.0)).max(0.0)
    } else {
        0.0
    };
    let err_sq_mean = sum_e2 / count;
    let err_sq_stderr = if n > 1 {
        (((sum_e4 - sum_e2 * sum_e2 / count) / (count - 1.0)).max(0.0) / count).sqrt()
    } else {
        0.0
    };

    if !zs.iter().all(|z| z.is_finite()) {
        ens.xs = xs;
        return Err(CoreError::NonFiniteIterate { iteration: ens.k + 1 });
    }

    ens.xs = xs;
    ens.zs = zs;
    ens.k += 1;

    let predicted_mse = crate::cgmt::predicted_mse(&saddle, params.noise_var);
    Ok(SeStepOutcome {
        saddle,
        predicted_mse,
        s_mean,
        s_var,
        err_sq_mean,
        err_sq_stderr,
    })
}

#[allow(clippy::too_many_arguments)]
fn update_chunk(
    wt: &Weights,
    reg: &Regularizer,
    theta: f64,
    rho: f64,
    xs: &[f64],
    hs: &[f64],
    zs: &mut [f64],
    s_out: Option<&mut [f64]>,
) -> [f64; 4] {
    let mut sum_s = 0.0;
    let mut sum_s2 = 0.0;
    let mut sum_e2 = 0.0;
    let mut sum_e4 = 0.0;
    let mut sink = s_out;
    for i in 0..zs.len() {
        let (x, h, z) = (xs[i], hs[i], zs[i]);
        let s = decoupled_s(wt, x, h, z);
        let e2 = (s - x) * (s - x);
        sum_s += s;
        sum_s2 += s * s;
        sum_e2 += e2;
        sum_e4 += e2 * e2;
        zs[i] = z + rho * (reg.scalar_prox(2.0 * s - z, theta) - s);
        if let Some(sc) = sink.as_deref_mut() {
            sc[i] = s;
        }
    }
    [sum_s, sum_s2, sum_e2, sum_e4]
}

/// One row of the predicted trajectory.
#[derive(Clone, Debug)]
pub struct TraceRow {
    /// Iteration index, starting at 1.
    pub k: usize,
    pub alpha_star: f64,
    pub beta_star: f64,
    pub predicted_mse: f64,
    pub saddle_value: f64,
    pub ensemble_s_mean: f64,
    pub ensemble_s_var: f64,
    pub err_sq_mean: f64,
    pub err_sq_stderr: f64,
}

/// Predicted trajectory over all recorded iterations.
#[derive(Clone, Debug, Default)]
pub struct EvolutionTrace {
    pub rows: Vec<TraceRow>,
}

/// Runs `iterations` evolution steps from a newly drawn ensemble described by
/// the configuration (particle count `mc_particles`, master seed `seed`).
pub fn se_run(config: &SystemConfig, iterations: usize) -> Result<EvolutionTrace> {
    se_run_with(config, iterations, HMode::default(), &SearchOptions::default())
}

pub fn se_run_with(
    config: &SystemConfig,
    iterations: usize,
    h_mode: HMode,
    opts: &SearchOptions,
) -> Result<EvolutionTrace> {
    config.validate()?;
    let mut ens = init_ensemble(&config.prior, config.mc_particles, config.seed)?.with_h_mode(h_mode);
    let params = ScalarParams::from_config(config);
    let reg = Regularizer::L1;
    let mut rows = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let out = se_step(&mut ens, &reg, &params, opts)?;
        rows.push(TraceRow {
            k: ens.k(),
            alpha_star: out.saddle.alpha,
            beta_star: out.saddle.beta,
            predicted_mse: out.predicted_mse,
            saddle_value: out.saddle.value,
            ensemble_s_mean: out.s_mean,
            ensemble_s_var: out.s_var,
            err_sq_mean: out.err_sq_mean,
            err_sq_stderr: out.err_sq_stderr,
        });
    }
    Ok(EvolutionTrace { rows })
}

/// Two-sample Kolmogorov-Smirnov distance `sup_t |F_a(t) - F_b(t)|`.
pub fn ks_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() {
        return Err(CoreError::EmptySample("ks_distance first sample"));
    }
    if b.is_empty() {
        return Err(CoreError::EmptySample("ks_distance second sample"));
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(|p, q| p.total_cmp(q));
    sb.sort_by(|p, q| p.total_cmp(q));
    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0f64;
    while i < sa.len() && j < sb.len() {
        let t = sa[i].min(sb[j]);
        while i < sa.len() && sa[i] <= t {
            i += 1;
        }
        while j < sb.len() && sb[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params() -> ScalarParams {
        ScalarParams {
            delta: 0.7,
            noise_var: 0.001,
            gamma: 10.0,
            lambda: 0.02,
            rho: 1.0,
        }
    }

    fn config(particles: usize, seed: u64) -> SystemConfig {
        SystemConfig {
            n: 100,
            m: 70,
            noise_var: 0.001,
            prior: Prior::BernoulliGaussian { p0: 0.9 },
            lambda: 0.02,
            gamma: 10.0,
            rho: 1.0,
            iterations: 5,
            seed,
            mc_particles: particles,
            trials: 1,
        }
    }

    #[test]
    fn init_draws_prior_and_zeroes_iterate() {
        let prior = Prior::BernoulliGaussian { p0: 0.9 };
        let count = 1_000_000usize;
        let ens = init_ensemble(&prior, count, 5).unwrap();
        assert_eq!(ens.len(), count);
        assert_eq!(ens.k(), 0);
        assert!(ens.zs().iter().all(|z| *z == 0.0));
        let zeros = ens.xs().iter().filter(|x| **x == 0.0).count() as f64;
        let mean = 0.9 * count as f64;
        let sd = (count as f64 * 0.9 * 0.1).sqrt();
        assert!((zeros - mean).abs() <= 3.0 * sd, "zeros = {zeros}");

        let again = init_ensemble(&prior, count, 5).unwrap();
        assert_eq!(ens.xs(), again.xs());
        assert!(init_ensemble(&prior, 0, 5).is_err());
    }

    #[test]
    fn step_increments_k_and_is_deterministic() {
        let prior = Prior::BernoulliGaussian { p0: 0.9 };
        let mut a = init_ensemble(&prior, 20_000, 9).unwrap();
        let mut b = init_ensemble(&prior, 20_000, 9).unwrap();
        let reg = Regularizer::L1;
        let opts = SearchOptions::default();
        for _ in 0..3 {
            let oa = se_step(&mut a, &reg, &params(), &opts).unwrap();
            let ob = se_step(&mut b, &reg, &params(), &opts).unwrap();
            assert_eq!(oa.saddle.alpha.to_bits(), ob.saddle.alpha.to_bits());
            assert_eq!(oa.err_sq_mean.to_bits(), ob.err_sq_mean.to_bits());
            assert_eq!(a.zs(), b.zs());
        }
        assert_eq!(a.k(), 3);
    }

    #[test]
    fn stationarity_identity_holds_on_shared_ensemble() {
        // mean((S - X)^2) computed in the update equals alpha*^2 - noise_var
        // up to the line-search tolerance, because both use the same draws.
        let prior = Prior::BernoulliGaussian { p0: 0.9 };
        let mut ens = init_ensemble(&prior, 50_000, 13).unwrap();
        let reg = Regularizer::L1;
        let opts = SearchOptions::default();
        for _ in 0..5 {
            let out = se_step(&mut ens, &reg, &params(), &opts).unwrap();
            let implied = out.saddle.alpha * out.saddle.alpha - 0.001;
            assert_relative_eq!(out.err_sq_mean, implied, epsilon = 1e-6, max_relative = 1e-4);
        }
    }

    #[test]
    fn sampled_particles_match_reported_moments() {
        let prior = Prior::BernoulliGaussian { p0: 0.9 };
        let mut ens = init_ensemble(&prior, 30_000, 21).unwrap();
        let reg = Regularizer::L1;
        let opts = SearchOptions::default();
        let mut s = Vec::new();
        let out = se_step_with_sample(&mut ens, &reg, &params(), &opts, &mut s).unwrap();
        assert_eq!(s.len(), 30_000);
        let mean = s.iter().sum::<f64>() / s.len() as f64;
        assert_relative_eq!(mean, out.s_mean, epsilon = 1e-12);
        let e2 = s
            .iter()
            .zip(ens.xs())
            .map(|(si, xi)| (si - xi) * (si - xi))
            .sum::<f64>()
            / s.len() as f64;
        assert_relative_eq!(e2, out.err_sq_mean, epsilon = 1e-12);
    }

    #[test]
    fn h_modes_share_the_first_draw_then_diverge() {
        let prior = Prior::BernoulliGaussian { p0: 0.9 };
        let reg = Regularizer::L1;
        let opts = SearchOptions::default();

        let mut fresh = init_ensemble(&prior, 5_000, 31).unwrap().with_h_mode(HMode::Fresh);
        let mut persistent = init_ensemble(&prior, 5_000, 31).unwrap();
        assert_eq!(persistent.h_mode(), HMode::Persistent);

        // First step uses iteration-0 noise in both modes: identical outcome.
        let f0 = se_step(&mut fresh, &reg, &params(), &opts).unwrap();
        let p0 = se_step(&mut persistent, &reg, &params(), &opts).unwrap();
        assert_eq!(f0.saddle.alpha.to_bits(), p0.saddle.alpha.to_bits());

        // Later steps differ: fresh redraws, persistent reuses.
        let f1 = se_step(&mut fresh, &reg, &params(), &opts).unwrap();
        let p1 = se_step(&mut persistent, &reg, &params(), &opts).unwrap();
        assert_ne!(f1.saddle.alpha.to_bits(), p1.saddle.alpha.to_bits());
    }

    #[test]
    fn run_produces_indexed_rows_and_decreasing_error() {
        let trace = se_run(&config(20_000, 3), 10).unwrap();
        assert_eq!(trace.rows.len(), 10);
        for (i, row) in trace.rows.iter().enumerate() {
            assert_eq!(row.k, i + 1);
            assert!(row.predicted_mse.is_finite() && row.predicted_mse >= 0.0);
        }
        // The iteration contracts toward the solution: late error well below
        // the k=1 error for this well-posed setup.
        let first = trace.rows.first().unwrap().predicted_mse;
        let last = trace.rows.last().unwrap().predicted_mse;
        assert!(
            last < 0.5 * first,
            "no contraction: first {first}, last {last}"
        );
    }

    #[test]
    fn ks_distance_hand_values() {
        let a = [0.0, 0.0, 0.0];
        let b = [1.0, 1.0];
        assert_relative_eq!(ks_distance(&a, &b).unwrap(), 1.0, epsilon = 1e-15);

        let c = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(ks_distance(&c, &c).unwrap(), 0.0);

        // F_a jumps to 1/2 at 0 and 1 at 1; F_b jumps to 1 at 0.5: sup gap 1/2.
        let d1 = [0.0, 1.0];
        let d2 = [0.5];
        assert_relative_eq!(ks_distance(&d1, &d2).unwrap(), 0.5, epsilon = 1e-15);

        assert!(ks_distance(&[], &b).is_err());
        assert!(ks_distance(&a, &[]).is_err());
    }

    #[test]
    fn ks_distance_on_same_distribution_stays_below_null_bound() {
        let a = crate::rng::standard_normal_vec(71, 100_000);
        let b = crate::rng::standard_normal_vec(72, 100_000);
        let d = ks_distance(&a, &b).unwrap();
        // 99th percentile of the null is c(0.01) * sqrt(2/1e5) ~ 0.0073.
        assert!(d <= 0.01, "null KS distance {d}");
    }
}
