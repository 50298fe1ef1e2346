//! Problem setup: priors, run configuration, and sampled instances of the
//! noisy linear observation model `y = A x + v`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{CoreError, Result};
use crate::rng::seeded_rng;

/// Margin excluded from both ends of the admissible relaxation range.
pub const RHO_MARGIN: f64 = 1e-3;

/// Scalar prior for the entries of the unknown vector.
#[derive(Clone)]
pub enum Prior {
    /// Zero with probability `p0`, standard Gaussian otherwise.
    BernoulliGaussian { p0: f64 },
    /// User-supplied sampler with declared first and second moments.
    Custom {
        sampler: Arc<dyn Fn(&mut ChaCha8Rng) -> f64 + Send + Sync>,
        mean: f64,
        variance: f64,
    },
}

impl fmt::Debug for Prior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Prior::BernoulliGaussian { p0 } => {
                f.debug_struct("BernoulliGaussian").field("p0", p0).finish()
            }
            Prior::Custom { mean, variance, .. } => f
                .debug_struct("Custom")
                .field("mean", mean)
                .field("variance", variance)
                .finish_non_exhaustive(),
        }
    }
}

impl Prior {
    pub fn validate(&self) -> Result<()> {
        match self {
            Prior::BernoulliGaussian { p0 } => {
                if !(p0.is_finite() && *p0 > 0.0 && *p0 < 1.0) {
                    return Err(CoreError::InvalidConfig(format!(
                        "p0 must lie strictly inside (0, 1), got {p0}"
                    )));
                }
            }
            Prior::Custom { mean, variance, .. } => {
                if !mean.is_finite() || !variance.is_finite() || *variance < 0.0 {
                    return Err(CoreError::InvalidConfig(format!(
                        "custom prior needs finite mean and nonnegative variance, got mean={mean} variance={variance}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        match self {
            Prior::BernoulliGaussian { .. } => 0.0,
            Prior::Custom { mean, .. } => *mean,
        }
    }

    pub fn variance(&self) -> f64 {
        match self {
            Prior::BernoulliGaussian { p0 } => 1.0 - p0,
            Prior::Custom { variance, .. } => *variance,
        }
    }

    /// Draws one value. Bernoulli-Gaussian spends one uniform, then one
    /// normal only when the entry is active, so draw counts stay reproducible.
    pub fn sample_one(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            Prior::BernoulliGaussian { p0 } => {
                let u: f64 = rng.random();
                if u < *p0 {
                    0.0
                } else {
                    StandardNormal.sample(rng)
                }
            }
            Prior::Custom { sampler, .. } => sampler(rng),
        }
    }
}

/// Full description of one experiment: problem sizes, prior, algorithm
/// parameters, and Monte Carlo budgets.
#[derive(Clone, Debug)]
pub struct SystemConfig {
    /// Signal dimension N.
    pub n: usize,
    /// Measurement dimension M.
    pub m: usize,
    /// Variance of each additive noise entry.
    pub noise_var: f64,
    pub prior: Prior,
    /// l1 regularization weight.
    pub lambda: f64,
    /// Proximal step scale.
    pub gamma: f64,
    /// Relaxation factor, constrained to `[RHO_MARGIN, 2 - RHO_MARGIN]`.
    pub rho: f64,
    /// Number of iterations to record.
    pub iterations: usize,
    /// Master seed; all substreams derive from it.
    pub seed: u64,
    /// Particle count for the scalar-process predictor.
    pub mc_particles: usize,
    /// Independent problem instances for the empirical average.
    pub trials: usize,
}

impl SystemConfig {
    /// Measurement ratio M/N.
    pub fn delta(&self) -> f64 {
        self.m as f64 / self.n as f64
    }

    pub fn overdetermined(&self) -> bool {
        self.m >= self.n
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 {
            return Err(CoreError::InvalidConfig(format!(
                "dimensions must be positive, got n={} m={}",
                self.n, self.m
            )));
        }
        if !(self.noise_var.is_finite() && self.noise_var >= 0.0) {
            return Err(CoreError::InvalidConfig(format!(
                "noise_var must be finite and nonnegative, got {}",
                self.noise_var
            )));
        }
        self.prior.validate()?;
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(CoreError::InvalidConfig(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(CoreError::InvalidConfig(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        if !(self.rho.is_finite() && self.rho >= RHO_MARGIN && self.rho <= 2.0 - RHO_MARGIN) {
            return Err(CoreError::InvalidConfig(format!(
                "rho must lie in [{RHO_MARGIN}, {}], got {}",
                2.0 - RHO_MARGIN,
                self.rho
            )));
        }
        if self.iterations == 0 {
            return Err(CoreError::InvalidConfig("iterations must be positive".into()));
        }
        if self.mc_particles == 0 {
            return Err(CoreError::InvalidConfig("mc_particles must be positive".into()));
        }
        if self.trials == 0 {
            return Err(CoreError::InvalidConfig("trials must be positive".into()));
        }
        Ok(())
    }
}

/// One sampled instance of the observation model.
#[derive(Clone, Debug)]
pub struct ProblemInstance {
    /// Ground-truth signal, length N.
    pub x: DVector<f64>,
    /// Measurement matrix, M x N, i.i.d. N(0, 1/N) entries.
    pub a: DMatrix<f64>,
    /// Additive noise, length M.
    pub v: DVector<f64>,
    /// Observations `A x + v`.
    pub y: DVector<f64>,
}

impl ProblemInstance {
    pub fn n(&self) -> usize {
        self.a.ncols()
    }

    pub fn m(&self) -> usize {
        self.a.nrows()
    }

    pub fn delta(&self) -> f64 {
        self.m() as f64 / self.n() as f64
    }
}

/// Draws `count` i.i.d. values from the prior.
pub fn sample_prior(prior: &Prior, count: usize, seed: u64) -> Result<Vec<f64>> {
    prior.validate()?;
    let mut rng = seeded_rng(seed);
    let out: Vec<f64> = (0..count).map(|_| prior.sample_one(&mut rng)).collect();
    #[cfg(debug_assertions)]
    if let Prior::Custom { mean, variance, .. } = prior {
        spot_check_moments(&out, *mean, *variance);
    }
    Ok(out)
}

/// Loose sanity check that a custom sampler roughly matches its declared
/// moments; debug builds only, and only for large draws where the bound is
/// meaningful.
#[cfg(debug_assertions)]
fn spot_check_moments(values: &[f64], mean: f64, variance: f64) {
    if values.len() < 10_000 {
        return;
    }
    let n = values.len() as f64;
    let m1 = values.iter().sum::<f64>() / n;
    let m2 = values.iter().map(|v| (v - m1) * (v - m1)).sum::<f64>() / n;
    let scale = variance.max(1e-12);
    let mean_slack = 10.0 * (scale / n).sqrt();
    debug_assert!(
        (m1 - mean).abs() <= mean_slack.max(1e-6),
        "custom prior sample mean {m1} far from declared {mean}"
    );
    debug_assert!(
        m2 <= 25.0 * scale + 1e-9 && m2 >= scale / 25.0 - 1e-9,
        "custom prior sample variance {m2} far from declared {variance}"
    );
}

/// Samples a full problem instance from one seed.
///
/// Draw order is fixed: the N signal entries, then the M x N matrix entries
/// in column-major order, then the M noise entries, all from a single
/// ChaCha8 stream, so an instance is a pure function of `(config, seed)`.
pub fn sample_instance(config: &SystemConfig, seed: u64) -> Result<ProblemInstance> {
    config.validate()?;
    let (n, m) = (config.n, config.m);
    let mut rng = seeded_rng(seed);

    let x_data: Vec<f64> = (0..n).map(|_| config.prior.sample_one(&mut rng)).collect();
    #[cfg(debug_assertions)]
    if let Prior::Custom { mean, variance, .. } = &config.prior {
        spot_check_moments(&x_data, *mean, *variance);
    }

    let col_scale = 1.0 / (n as f64).sqrt();
    let a_data: Vec<f64> = (0..m * n)
        .map(|_| {
            let g: f64 = StandardNormal.sample(&mut rng);
            g * col_scale
        })
        .collect();

    let noise_scale = config.noise_var.sqrt();
    let v_data: Vec<f64> = (0..m)
        .map(|_| {
            let g: f64 = StandardNormal.sample(&mut rng);
            g * noise_scale
        })
        .collect();

    let x = DVector::from_vec(x_data);
    let a = DMatrix::from_column_slice(m, n, &a_data);
    let v = DVector::from_vec(v_data);
    let y = &a * &x + &v;
    Ok(ProblemInstance { x, a, v, y })
}

/// Per-coordinate mean squared error between an estimate and the truth.
pub fn empirical_mse(estimate: &DVector<f64>, truth: &DVector<f64>) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(CoreError::LengthMismatch {
            what: "empirical_mse operands",
            expected: truth.len(),
            got: estimate.len(),
        });
    }
    if truth.is_empty() {
        return Err(CoreError::EmptySample("empirical_mse"));
    }
    let sum: f64 = estimate
        .iter()
        .zip(truth.iter())
        .map(|(s, x)| (s - x) * (s - x))
        .sum();
    Ok(sum / truth.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn test_config() -> SystemConfig {
        SystemConfig {
            n: 40,
            m: 28,
            noise_var: 0.001,
            prior: Prior::BernoulliGaussian { p0: 0.9 },
            lambda: 0.02,
            gamma: 10.0,
            rho: 1.0,
            iterations: 10,
            seed: 7,
            mc_particles: 1000,
            trials: 4,
        }
    }

    #[test]
    fn bernoulli_gaussian_zero_fraction_matches_p0() {
        let p0 = 0.9;
        let count = 1_000_000usize;
        let draws = sample_prior(&Prior::BernoulliGaussian { p0 }, count, 11).unwrap();
        let zeros = draws.iter().filter(|v| **v == 0.0).count() as f64;
        let mean = p0 * count as f64;
        let sd = (count as f64 * p0 * (1.0 - p0)).sqrt();
        assert!(
            (zeros - mean).abs() <= 3.0 * sd,
            "zero count {zeros} outside 3 sigma of {mean}"
        );
        let nonzeros: Vec<f64> = draws.iter().copied().filter(|v| *v != 0.0).collect();
        let var = nonzeros.iter().map(|v| v * v).sum::<f64>() / nonzeros.len() as f64;
        assert!((var - 1.0).abs() < 0.02, "active-entry variance {var}");
    }

    #[test]
    fn prior_moments() {
        let prior = Prior::BernoulliGaussian { p0: 0.8 };
        assert_relative_eq!(prior.variance(), 0.2, epsilon = 1e-15);
        assert_eq!(prior.mean(), 0.0);
    }

    #[test]
    fn prior_rejects_bad_p0() {
        for p0 in [0.0, 1.0, -0.1, 1.1, f64::NAN] {
            assert!(Prior::BernoulliGaussian { p0 }.validate().is_err(), "p0={p0}");
        }
    }

    #[test]
    fn custom_prior_samples_through_closure() {
        let prior = Prior::Custom {
            sampler: Arc::new(|rng: &mut ChaCha8Rng| {
                let u: f64 = rng.random();
                if u < 0.5 {
                    -1.0
                } else {
                    1.0
                }
            }),
            mean: 0.0,
            variance: 1.0,
        };
        let draws = sample_prior(&prior, 20_000, 3).unwrap();
        assert!(draws.iter().all(|v| v.abs() == 1.0));
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!(mean.abs() < 0.05);
    }

    #[test]
    fn config_validation_catches_bad_fields() {
        let ok = test_config();
        ok.validate().unwrap();

        let mut c = test_config();
        c.rho = 0.0;
        assert!(c.validate().is_err());
        c = test_config();
        c.rho = 2.0;
        assert!(c.validate().is_err());
        c = test_config();
        c.rho = RHO_MARGIN;
        c.validate().unwrap();
        c.rho = 2.0 - RHO_MARGIN;
        c.validate().unwrap();

        c = test_config();
        c.gamma = 0.0;
        assert!(c.validate().is_err());
        c = test_config();
        c.lambda = -1.0;
        assert!(c.validate().is_err());
        c = test_config();
        c.noise_var = -0.1;
        assert!(c.validate().is_err());
        c = test_config();
        c.n = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn instance_is_seed_deterministic() {
        let config = test_config();
        let a = sample_instance(&config, 99).unwrap();
        let b = sample_instance(&config, 99).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.a, b.a);
        assert_eq!(a.y, b.y);
        let c = sample_instance(&config, 100).unwrap();
        assert_ne!(a.a, c.a);
    }

    #[test]
    fn instance_shapes_and_observation_identity() {
        let config = test_config();
        let inst = sample_instance(&config, 5).unwrap();
        assert_eq!(inst.x.len(), config.n);
        assert_eq!((inst.a.nrows(), inst.a.ncols()), (config.m, config.n));
        assert_eq!(inst.v.len(), config.m);
        let recomputed = &inst.a * &inst.x + &inst.v;
        assert_relative_eq!(
            (recomputed - &inst.y).norm(),
            0.0,
            epsilon = 1e-14
        );
        assert_relative_eq!(inst.delta(), 0.7, epsilon = 1e-15);
    }

    #[test]
    fn matrix_entries_have_unit_column_energy() {
        let mut config = test_config();
        config.n = 400;
        config.m = 280;
        let inst = sample_instance(&config, 17).unwrap();
        // Entry variance 1/N makes E[row norm^2] = 1 per row of A^T A's diagonal.
        let total: f64 = inst.a.iter().map(|e| e * e).sum();
        let per_entry = total / (config.n * config.m) as f64;
        assert!(
            (per_entry * config.n as f64 - 1.0).abs() < 0.02,
            "entry variance * N = {}",
            per_entry * config.n as f64
        );
    }

    #[test]
    fn mse_zero_on_equal_vectors_and_errors_on_mismatch() {
        let x = DVector::from_vec(vec![1.0, -2.0, 3.0]);
        assert_eq!(empirical_mse(&x, &x).unwrap(), 0.0);

        let s = DVector::from_vec(vec![2.0, -2.0, 1.0]);
        // (1 + 0 + 4) / 3
        assert_relative_eq!(empirical_mse(&s, &x).unwrap(), 5.0 / 3.0, epsilon = 1e-15);

        let short = DVector::from_vec(vec![0.0]);
        assert!(matches!(
            empirical_mse(&short, &x),
            Err(CoreError::LengthMismatch { .. })
        ));
    }
}
