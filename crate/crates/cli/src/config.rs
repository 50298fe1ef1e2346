//! Flat `key = value` experiment configuration: strict parsing, canonical
//! serialization, and flag overrides.
//!
//! The format is deliberately minimal: one `key = value` per line, `#` starts
//! a comment, unknown or repeated keys are errors. Serializing a parsed
//! configuration is canonical (fixed key order, shortest round-trip floats),
//! so `parse -> serialize -> parse` is idempotent.

use std::collections::HashSet;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use drasym_core::{CoreError, HMode, Prior, SystemConfig};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config line {line}: expected `key = value`, got {text:?}")]
    Malformed { line: usize, text: String },
    #[error("config line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("config line {line}: duplicate key {key:?}")]
    DuplicateKey { line: usize, key: String },
    #[error("config key {key:?}: {message}")]
    InvalidValue { key: &'static str, message: String },
    #[error("config: {0}")]
    Invalid(#[from] CoreError),
}

/// What the harness runs: the matrix solver, the scalar predictor, both on
/// the same parameters, or a predictor sweep over `gamma_grid`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunMode {
    Empirical,
    Predict,
    Both,
    SweepGamma,
}

impl RunMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RunMode::Empirical => "empirical",
            RunMode::Predict => "predict",
            RunMode::Both => "both",
            RunMode::SweepGamma => "sweep",
        }
    }

    pub fn includes_empirical(self) -> bool {
        matches!(self, RunMode::Empirical | RunMode::Both)
    }

    pub fn includes_prediction(self) -> bool {
        matches!(self, RunMode::Predict | RunMode::Both | RunMode::SweepGamma)
    }
}

impl fmt::Display for RunMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RunMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "empirical" => Ok(RunMode::Empirical),
            "predict" => Ok(RunMode::Predict),
            "both" => Ok(RunMode::Both),
            "sweep" => Ok(RunMode::SweepGamma),
            other => Err(format!(
                "unknown mode {other:?} (expected empirical|predict|both|sweep)"
            )),
        }
    }
}

/// A full experiment description: the system parameters plus harness-level
/// settings (what to run, the sweep grid, where the CSV goes).
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    pub mode: RunMode,
    /// Gamma values visited in sweep mode, kept sorted ascending.
    pub gamma_grid: Vec<f64>,
    /// Iteration indices reported per gamma in sweep mode.
    pub snapshot_iterations: Vec<usize>,
    pub output_path: PathBuf,
    /// Whether scalar particles keep their Gaussian draw across iterations
    /// (mirrors the fixed measurement matrix) or redraw it each step.
    pub h_mode: HMode,
    /// In sweep mode, also run solver trials at every grid point.
    pub sweep_empirical: bool,
}

impl Default for ExperimentConfig {
    /// Reference parameters: N=500, M=350, 10% dense Bernoulli-Gaussian
    /// signal, noise variance 1e-3, gamma=10, rho=1. The default lambda is
    /// tuned so the predictor tracks the solver closely at these parameters.
    fn default() -> Self {
        ExperimentConfig {
            system: SystemConfig {
                n: 500,
                m: 350,
                noise_var: 1e-3,
                prior: Prior::BernoulliGaussian { p0: 0.9 },
                lambda: 0.009,
                gamma: 10.0,
                rho: 1.0,
                iterations: 100,
                seed: 20260817,
                mc_particles: 300_000,
                trials: 500,
            },
            mode: RunMode::Both,
            gamma_grid: (1..=30).map(|g| g as f64).collect(),
            snapshot_iterations: vec![5, 10, 20],
            output_path: PathBuf::from("drasym.csv"),
            h_mode: HMode::Persistent,
            sweep_empirical: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.system.validate()?;
        for &g in &self.gamma_grid {
            if !g.is_finite() || g <= 0.0 {
                return Err(ConfigError::InvalidValue {
                    key: "gamma_grid",
                    message: format!("entries must be positive and finite, got {g}"),
                });
            }
        }
        if self.mode == RunMode::SweepGamma {
            if self.gamma_grid.is_empty() {
                return Err(ConfigError::InvalidValue {
                    key: "gamma_grid",
                    message: "must be nonempty in sweep mode".into(),
                });
            }
            if self.snapshot_iterations.is_empty() {
                return Err(ConfigError::InvalidValue {
                    key: "snapshot_iterations",
                    message: "must be nonempty in sweep mode".into(),
                });
            }
            if let Some(&bad) = self
                .snapshot_iterations
                .iter()
                .find(|&&k| k == 0 || k > self.system.iterations)
            {
                return Err(ConfigError::InvalidValue {
                    key: "snapshot_iterations",
                    message: format!(
                        "entries must lie in 1..=iterations ({}), got {bad}",
                        self.system.iterations
                    ),
                });
            }
        }
        Ok(())
    }

    fn p0(&self) -> f64 {
        match self.system.prior {
            Prior::BernoulliGaussian { p0 } => p0,
            // Custom priors are not expressible in the file format.
            Prior::Custom { .. } => f64::NAN,
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub mode: Option<RunMode>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub particles: Option<usize>,
    pub trials: Option<usize>,
}

pub fn apply_overrides(cfg: &mut ExperimentConfig, ov: &Overrides) {
    if let Some(mode) = ov.mode {
        cfg.mode = mode;
    }
    if let Some(seed) = ov.seed {
        cfg.system.seed = seed;
    }
    if let Some(ref out) = ov.out {
        cfg.output_path = out.clone();
    }
    if let Some(particles) = ov.particles {
        cfg.system.mc_particles = particles;
    }
    if let Some(trials) = ov.trials {
        cfg.system.trials = trials;
    }
}

fn parse_num<T: FromStr>(key: &'static str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e| ConfigError::InvalidValue {
        key,
        message: format!("cannot parse {value:?}: {e}"),
    })
}

/// Grid syntax: either an inclusive integer range `a..b` or a comma list of
/// numbers (`2,6,10`). The result is sorted and deduplicated.
fn parse_grid(value: &str) -> Result<Vec<f64>, ConfigError> {
    let mut grid: Vec<f64> = if let Some((lo, hi)) = value.split_once("..") {
        let lo: i64 = parse_num("gamma_grid", lo.trim())?;
        let hi: i64 = parse_num("gamma_grid", hi.trim())?;
        if lo > hi {
            return Err(ConfigError::InvalidValue {
                key: "gamma_grid",
                message: format!("empty range {lo}..{hi}"),
            });
        }
        (lo..=hi).map(|g| g as f64).collect()
    } else {
        value
            .split(',')
            .map(|part| parse_num("gamma_grid", part.trim()))
            .collect::<Result<_, _>>()?
    };
    grid.sort_by(|a, b| a.total_cmp(b));
    grid.dedup();
    if grid.is_empty() {
        return Err(ConfigError::InvalidValue {
            key: "gamma_grid",
            message: "empty grid".into(),
        });
    }
    Ok(grid)
}

fn parse_snapshots(value: &str) -> Result<Vec<usize>, ConfigError> {
    let mut ks: Vec<usize> = value
        .split(',')
        .map(|part| parse_num("snapshot_iterations", part.trim()))
        .collect::<Result<_, _>>()?;
    ks.sort_unstable();
    ks.dedup();
    Ok(ks)
}

/// Parses a configuration file body. Unset keys keep their defaults.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = ExperimentConfig::default();
    let mut seen = HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(ConfigError::Malformed {
                line,
                text: content.to_string(),
            });
        };
        let key = key.trim();
        let value = value.trim();
        if !seen.insert(key.to_string()) {
            return Err(ConfigError::DuplicateKey {
                line,
                key: key.to_string(),
            });
        }
        match key {
            "n" => cfg.system.n = parse_num("n", value)?,
            "m" => cfg.system.m = parse_num("m", value)?,
            "noise_var" => cfg.system.noise_var = parse_num("noise_var", value)?,
            "prior" => {
                if value != "bernoulli_gaussian" {
                    return Err(ConfigError::InvalidValue {
                        key: "prior",
                        message: format!("unknown prior {value:?} (expected bernoulli_gaussian)"),
                    });
                }
            }
            "p0" => {
                cfg.system.prior = Prior::BernoulliGaussian {
                    p0: parse_num("p0", value)?,
                }
            }
            "lambda" => cfg.system.lambda = parse_num("lambda", value)?,
            "gamma" => cfg.system.gamma = parse_num("gamma", value)?,
            "rho" => cfg.system.rho = parse_num("rho", value)?,
            "iterations" => cfg.system.iterations = parse_num("iterations", value)?,
            "seed" => cfg.system.seed = parse_num("seed", value)?,
            "mc_particles" => cfg.system.mc_particles = parse_num("mc_particles", value)?,
            "trials" => cfg.system.trials = parse_num("trials", value)?,
            "mode" => {
                cfg.mode = value.parse().map_err(|message| ConfigError::InvalidValue {
                    key: "mode",
                    message,
                })?
            }
            "gamma_grid" => cfg.gamma_grid = parse_grid(value)?,
            "snapshot_iterations" => cfg.snapshot_iterations = parse_snapshots(value)?,
            "out" => cfg.output_path = PathBuf::from(value),
            "h_mode" => {
                cfg.h_mode = match value {
                    "persistent" => HMode::Persistent,
                    "fresh" => HMode::Fresh,
                    other => {
                        return Err(ConfigError::InvalidValue {
                            key: "h_mode",
                            message: format!(
                                "unknown h_mode {other:?} (expected persistent|fresh)"
                            ),
                        })
                    }
                }
            }
            "sweep_empirical" => cfg.sweep_empirical = parse_num("sweep_empirical", value)?,
            other => {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: other.to_string(),
                });
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Compact `a..b` form for grids that are consecutive integers, the comma
/// list otherwise.
fn grid_to_string(grid: &[f64]) -> String {
    let as_ints: Option<Vec<i64>> = grid
        .iter()
        .map(|&g| (g.fract() == 0.0 && g.abs() < 1e15).then_some(g as i64))
        .collect();
    if let Some(ints) = as_ints {
        if ints.len() >= 3 && ints.windows(2).all(|w| w[1] == w[0] + 1) {
            return format!("{}..{}", ints[0], ints[ints.len() - 1]);
        }
    }
    grid.iter()
        .map(|g| g.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

/// Canonical text form: every key, fixed order, shortest round-trip floats.
pub fn serialize_config(cfg: &ExperimentConfig) -> String {
    let sys = &cfg.system;
    let snapshots = cfg
        .snapshot_iterations
        .iter()
        .map(|k| k.to_string())
        .collect::<Vec<_>>()
        .join(",");
    format!(
        "# drasym experiment configuration\n\
         n = {}\n\
         m = {}\n\
         noise_var = {}\n\
         prior = bernoulli_gaussian\n\
         p0 = {}\n\
         lambda = {}\n\
         gamma = {}\n\
         rho = {}\n\
         iterations = {}\n\
         seed = {}\n\
         mc_particles = {}\n\
         trials = {}\n\
         mode = {}\n\
         gamma_grid = {}\n\
         snapshot_iterations = {}\n\
         out = {}\n\
         h_mode = {}\n\
         sweep_empirical = {}\n",
        sys.n,
        sys.m,
        sys.noise_var,
        cfg.p0(),
        sys.lambda,
        sys.gamma,
        sys.rho,
        sys.iterations,
        sys.seed,
        sys.mc_particles,
        sys.trials,
        cfg.mode,
        grid_to_string(&cfg.gamma_grid),
        snapshots,
        cfg.output_path.display(),
        match cfg.h_mode {
            HMode::Persistent => "persistent",
            HMode::Fresh => "fresh",
        },
        cfg.sweep_empirical,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.gamma_grid.len(), 30);
    }

    #[test]
    fn round_trip_is_idempotent() {
        let text = "
            # comment
            n = 64
            m = 96            # inline comment
            lambda = 0.0125
            mode = sweep
            gamma_grid = 6,2,10.5
            snapshot_iterations = 20,5
            out = results/run.csv
            sweep_empirical = true
        ";
        let parsed = parse_config(text).unwrap();
        let once = serialize_config(&parsed);
        let twice = serialize_config(&parse_config(&once).unwrap());
        assert_eq!(once, twice);
        assert_eq!(parsed.gamma_grid, vec![2.0, 6.0, 10.5]);
        assert_eq!(parsed.snapshot_iterations, vec![5, 20]);
        assert!(parsed.sweep_empirical);
        assert_eq!(parsed.system.n, 64);
        assert_eq!(parsed.system.m, 96);
    }

    #[test]
    fn canonical_form_survives_extreme_floats() {
        let mut cfg = ExperimentConfig::default();
        cfg.system.lambda = 0.1 + 0.2; // 0.30000000000000004
        cfg.system.noise_var = 1e-17;
        let once = serialize_config(&cfg);
        let re = parse_config(&once).unwrap();
        assert_eq!(re.system.lambda, cfg.system.lambda);
        assert_eq!(re.system.noise_var, cfg.system.noise_var);
        assert_eq!(serialize_config(&re), once);
    }

    #[test]
    fn unknown_key_rejected() {
        let err = parse_config("gamm = 10\n").unwrap_err();
        assert!(matches!(err, ConfigError::UnknownKey { line: 1, .. }), "{err}");
    }

    #[test]
    fn duplicate_key_rejected() {
        let err = parse_config("n = 10\nn = 20\n").unwrap_err();
        assert!(matches!(err, ConfigError::DuplicateKey { line: 2, .. }), "{err}");
    }

    #[test]
    fn malformed_line_rejected() {
        let err = parse_config("just some words\n").unwrap_err();
        assert!(matches!(err, ConfigError::Malformed { line: 1, .. }), "{err}");
    }

    #[test]
    fn range_grid_syntax() {
        let cfg = parse_config("gamma_grid = 1..5\n").unwrap();
        assert_eq!(cfg.gamma_grid, vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        // Compact form is kept on serialization.
        assert!(serialize_config(&cfg).contains("gamma_grid = 1..5\n"));
    }

    #[test]
    fn descending_range_rejected() {
        let err = parse_config("gamma_grid = 5..1\n").unwrap_err();
        assert!(matches!(err, ConfigError::InvalidValue { key: "gamma_grid", .. }), "{err}");
    }

    #[test]
    fn sweep_mode_requires_snapshots_within_iterations() {
        let err = parse_config("mode = sweep\niterations = 10\n").unwrap_err();
        assert!(
            matches!(err, ConfigError::InvalidValue { key: "snapshot_iterations", .. }),
            "{err}"
        );
    }

    #[test]
    fn semantic_validation_delegates_to_system() {
        let err = parse_config("rho = 5\n").unwrap_err();
        assert!(matches!(err, ConfigError::Invalid(_)), "{err}");
    }

    #[test]
    fn overrides_take_precedence() {
        let mut cfg = parse_config("seed = 1\ntrials = 10\n").unwrap();
        apply_overrides(
            &mut cfg,
            &Overrides {
                mode: Some(RunMode::Predict),
                seed: Some(99),
                out: Some(PathBuf::from("x.csv")),
                particles: Some(1234),
                trials: None,
            },
        );
        assert_eq!(cfg.mode, RunMode::Predict);
        assert_eq!(cfg.system.seed, 99);
        assert_eq!(cfg.system.mc_particles, 1234);
        assert_eq!(cfg.system.trials, 10);
        assert_eq!(cfg.output_path, PathBuf::from("x.csv"));
    }

    #[test]
    fn bad_mode_and_bad_h_mode_rejected() {
        assert!(parse_config("mode = quickly\n").is_err());
        assert!(parse_config("h_mode = sometimes\n").is_err());
        assert!(parse_config("prior = cauchy\n").is_err());
    }
}
