//! Scalar min-max kernel for the asymptotic error prediction.
//!
//! The high-dimensional data-fidelity prox decouples, in the large-system
//! limit, into a scalar map of three random variables: the signal entry `X`,
//! a standard Gaussian `H`, and the scalar iterate `Z`. This module evaluates
//! that map, the two-parameter objective whose saddle point `(alpha*, beta*)`
//! calibrates it, and a nested golden-section search that locates the saddle
//! on a fixed Monte Carlo ensemble.

use rayon::prelude::*;

use crate::error::{CoreError, Result};

/// One Monte Carlo particle: signal entry, Gaussian refresh, scalar iterate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalarSample {
    pub x: f64,
    pub h: f64,
    pub z: f64,
}

/// Column-wise storage of a fixed ensemble of `(x, h, z)` triples.
#[derive(Clone, Debug, Default)]
pub struct SampleSet {
    xs: Vec<f64>,
    hs: Vec<f64>,
    zs: Vec<f64>,
}

impl SampleSet {
    pub fn from_parts(xs: Vec<f64>, hs: Vec<f64>, zs: Vec<f64>) -> Result<Self> {
        if xs.len() != hs.len() {
            return Err(CoreError::LengthMismatch {
                what: "sample set h column",
                expected: xs.len(),
                got: hs.len(),
            });
        }
        if xs.len() != zs.len() {
            return Err(CoreError::LengthMismatch {
                what: "sample set z column",
                expected: xs.len(),
                got: zs.len(),
            });
        }
        Ok(Self { xs, hs, zs })
    }

    pub fn from_samples(samples: &[ScalarSample]) -> Self {
        Self {
            xs: samples.iter().map(|s| s.x).collect(),
            hs: samples.iter().map(|s| s.h).collect(),
            zs: samples.iter().map(|s| s.z).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn hs(&self) -> &[f64] {
        &self.hs
    }

    pub fn zs(&self) -> &[f64] {
        &self.zs
    }

    pub fn into_parts(self) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        (self.xs, self.hs, self.zs)
    }
}

/// Precomputed curvature weights shared by the decoupled map and the
/// objective, so both sides agree bit for bit.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Weights {
    /// `beta * sqrt(delta) / alpha`, the quadratic weight on `s - x`.
    pub w: f64,
    /// `1 / gamma`, the quadratic weight on `s - z`.
    pub c: f64,
    pub inv_denom: f64,
    pub beta: f64,
}

pub(crate) fn weights(alpha: f64, beta: f64, delta: f64, gamma: f64) -> Weights {
    let w = beta * delta.sqrt() / alpha;
    let c = 1.0 / gamma;
    Weights {
        w,
        c,
        inv_denom: 1.0 / (w + c),
        beta,
    }
}

/// Minimizer of the scalar quadratic `q(s)`; a convex combination of the
/// three inputs weighted by `w`, `beta`, and `1/gamma`.
#[inline]
pub(crate) fn decoupled_s(wt: &Weights, x: f64, h: f64, z: f64) -> f64 {
    (wt.w * x + wt.beta * h + wt.c * z) * wt.inv_denom
}

/// Value of `q` at its minimizer, where
/// `q(s) = (w/2)(s - x)^2 - beta h (s - x) + (1/(2 gamma))(s - z)^2`.
#[inline]
pub(crate) fn j_term(wt: &Weights, x: f64, h: f64, z: f64) -> f64 {
    let s = decoupled_s(wt, x, h, z);
    let dx = s - x;
    let dz = s - z;
    0.5 * wt.w * dx * dx - wt.beta * h * dx + 0.5 * wt.c * dz * dz
}

/// The decoupled scalar map `S(alpha, beta; x, h, z)`.
pub fn s_hat(alpha: f64, beta: f64, delta: f64, gamma: f64, sample: &ScalarSample) -> f64 {
    let wt = weights(alpha, beta, delta, gamma);
    decoupled_s(&wt, sample.x, sample.h, sample.z)
}

/// Per-sample contribution to the expectation term of the objective.
pub fn j_value(alpha: f64, beta: f64, delta: f64, gamma: f64, sample: &ScalarSample) -> f64 {
    let wt = weights(alpha, beta, delta, gamma);
    j_term(&wt, sample.x, sample.h, sample.z)
}

/// The per-sample quadratic evaluated at an arbitrary point `s` (not just its
/// minimizer): `(w/2)(s - x)^2 - beta h (s - x) + (1/(2 gamma))(s - z)^2` with
/// `w = beta sqrt(delta) / alpha`. [`s_hat`] is its argmin and [`j_value`] its
/// minimum, so `inner_objective(.., s_hat(..)) == j_value(..)`.
pub fn inner_objective(
    alpha: f64,
    beta: f64,
    delta: f64,
    gamma: f64,
    sample: &ScalarSample,
    s: f64,
) -> f64 {
    let wt = weights(alpha, beta, delta, gamma);
    let dx = s - sample.x;
    let dz = s - sample.z;
    0.5 * wt.w * dx * dx - wt.beta * sample.h * dx + 0.5 * wt.c * dz * dz
}

/// Number of samples reduced serially per parallel work unit. Fixed so the
/// summation tree, and therefore the floating-point result, is identical for
/// every thread count.
const REDUCTION_CHUNK: usize = 4096;

/// Pairwise sum with a fixed association order.
pub(crate) fn tree_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        n => {
            let mid = n / 2;
            tree_sum(&v[..mid]) + tree_sum(&v[mid..])
        }
    }
}

fn mean_j(wt: &Weights, samples: &SampleSet) -> f64 {
    let chunk_sums: Vec<f64> = samples
        .xs
        .par_chunks(REDUCTION_CHUNK)
        .zip(samples.hs.par_chunks(REDUCTION_CHUNK))
        .zip(samples.zs.par_chunks(REDUCTION_CHUNK))
        .map(|((xs, hs), zs)| {
            let mut acc = 0.0;
            for ((&x, &h), &z) in xs.iter().zip(hs).zip(zs) {
                acc += j_term(wt, x, h, z);
            }
            acc
        })
        .collect();
    tree_sum(&chunk_sums) / samples.len() as f64
}

/// Monte Carlo estimate of the two-parameter objective
/// `alpha beta sqrt(delta)/2 + beta sigma_v^2 sqrt(delta)/(2 alpha)
///  - beta^2/2 + E[J]`,
/// convex in `alpha` and concave in `beta` at fixed samples.
pub fn scalar_objective(
    alpha: f64,
    beta: f64,
    samples: &SampleSet,
    delta: f64,
    noise_var: f64,
    gamma: f64,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(CoreError::EmptyEnsemble);
    }
    if !(alpha > 0.0 && beta > 0.0 && delta > 0.0 && gamma > 0.0) || noise_var < 0.0 {
        return Err(CoreError::InvalidConfig(format!(
            "objective needs alpha, beta, delta, gamma > 0 and noise_var >= 0; \
             got alpha={alpha} beta={beta} delta={delta} noise_var={noise_var} gamma={gamma}"
        )));
    }
    let wt = weights(alpha, beta, delta, gamma);
    let sd = delta.sqrt();
    Ok(0.5 * alpha * beta * sd + 0.5 * beta * noise_var * sd / alpha - 0.5 * beta * beta
        + mean_j(&wt, samples))
}

/// Saddle point located by the nested search.
#[derive(Clone, Debug)]
pub struct SaddlePoint {
    pub alpha: f64,
    pub beta: f64,
    /// Objective value at `(alpha, beta)`.
    pub value: f64,
    /// Total objective evaluations spent.
    pub evaluations: usize,
    /// Human-readable notes: bracket expansions, edge landings, probes that
    /// broke the expected unimodal pattern. Empty when the search was clean.
    pub bracket_diagnostics: String,
}

#[derive(Clone, Debug)]
pub struct SearchOptions {
    pub alpha_bracket: (f64, f64),
    pub beta_bracket: (f64, f64),
    /// Absolute bracket width at which a line search stops.
    pub tol: f64,
    /// Times the upper edge may be doubled before the search gives up.
    pub max_expansions: usize,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            alpha_bracket: (1e-4, 10.0),
            beta_bracket: (1e-4, 10.0),
            tol: 1e-6,
            max_expansions: 20,
        }
    }
}

impl SearchOptions {
    fn validate(&self) -> Result<()> {
        let ok_bracket = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && 0.0 < lo && lo < hi;
        if !ok_bracket(self.alpha_bracket) || !ok_bracket(self.beta_bracket) {
            return Err(CoreError::InvalidConfig(format!(
                "search brackets must satisfy 0 < lo < hi, got alpha={:?} beta={:?}",
                self.alpha_bracket, self.beta_bracket
            )));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(CoreError::InvalidConfig(format!(
                "search tol must be positive, got {}",
                self.tol
            )));
        }
        Ok(())
    }
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

struct LineSearch {
    x: f64,
    value: f64,
    evals: usize,
    at_lower_edge: bool,
    at_upper_edge: bool,
    unimodal: bool,
}

/// Golden-section minimization on `[lo, hi]`. The recorded probes are checked
/// afterwards against the fall-then-rise pattern of a unimodal function; the
/// objective is deterministic for fixed samples, so a clean violation is a
/// real shape warning rather than Monte Carlo noise.
fn golden_section_min(f: &mut dyn FnMut(f64) -> f64, lo: f64, hi: f64, tol: f64) -> LineSearch {
    let mut probes: Vec<(f64, f64)> = Vec::with_capacity(64);
    let mut eval = |x: f64, probes: &mut Vec<(f64, f64)>| -> f64 {
        let v = f(x);
        probes.push((x, v));
        v
    };

    let (mut a, mut b) = (lo, hi);
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = eval(x1, &mut probes);
    let mut f2 = eval(x2, &mut probes);
    let mut guard = 0usize;
    while b - a > tol && guard < 400 {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = eval(x1, &mut probes);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = eval(x2, &mut probes);
        }
        guard += 1;
    }
    let (x, value) = if f1 <= f2 { (x1, f1) } else { (x2, f2) };

    probes.sort_by(|p, q| p.0.total_cmp(&q.0));
    let unimodal = is_unimodal_min(&probes);

    LineSearch {
        x,
        value,
        evals: probes.len(),
        at_lower_edge: x - lo <= 2.0 * tol,
        at_upper_edge: hi - x <= 2.0 * tol,
        unimodal,
    }
}

/// True when values sorted by abscissa fall (weakly) and then rise (weakly):
/// the signature of a unimodal minimum. Tiny differences are ignored.
fn is_unimodal_min(probes: &[(f64, f64)]) -> bool {
    let scale = probes
        .iter()
        .fold(0.0f64, |acc, p| acc.max(p.1.abs()))
        .max(1.0);
    let eps = 1e-11 * scale;
    let mut rising = false;
    for pair in probes.windows(2) {
        let d = pair[1].1 - pair[0].1;
        if d > eps {
            rising = true;
        } else if d < -eps && rising {
            return false;
        }
    }
    true
}

struct InnerMax {
    beta: f64,
    value: f64,
    expansions: usize,
    at_lower_edge: bool,
    unimodal: bool,
}

/// Maximizes the objective over `beta` at fixed `alpha`, doubling the upper
/// bracket edge if the maximizer lands there.
fn maximize_beta(
    alpha: f64,
    samples: &SampleSet,
    delta: f64,
    noise_var: f64,
    gamma: f64,
    opts: &SearchOptions,
    evals: &mut usize,
) -> Result<InnerMax> {
    let (lo, mut hi) = opts.beta_bracket;
    let mut expansions = 0usize;
    loop {
        let mut err: Option<CoreError> = None;
        let mut f = |beta: f64| match scalar_objective(alpha, beta, samples, delta, noise_var, gamma)
        {
            Ok(v) => -v,
            Err(e) => {
                err.get_or_insert(e);
                f64::INFINITY
            }
        };
        let res = golden_section_min(&mut f, lo, hi, opts.tol);
        *evals += res.evals;
        if let Some(e) = err {
            return Err(e);
        }
        if res.at_upper_edge {
            if expansions >= opts.max_expansions {
                return Err(CoreError::OptimumNotInterior {
                    axis: "beta",
                    hi,
                    expansions,
                });
            }
            hi *= 2.0;
            expansions += 1;
            continue;
        }
        return Ok(InnerMax {
            beta: res.x,
            value: -res.value,
            expansions,
            at_lower_edge: res.at_lower_edge,
            unimodal: res.unimodal,
        });
    }
}

/// Locates the saddle point `min_alpha max_beta` of the scalar objective on a
/// fixed ensemble by nested golden-section searches.
pub fn solve_saddle(
    samples: &SampleSet,
    delta: f64,
    noise_var: f64,
    gamma: f64,
    opts: &SearchOptions,
) -> Result<SaddlePoint> {
    if samples.is_empty() {
        return Err(CoreError::EmptyEnsemble);
    }
    if !(delta > 0.0 && gamma > 0.0) || noise_var < 0.0 {
        return Err(CoreError::InvalidConfig(format!(
            "saddle solve needs delta, gamma > 0 and noise_var >= 0; got delta={delta} noise_var={noise_var} gamma={gamma}"
        )));
    }
    opts.validate()?;

    let mut evals = 0usize;
    let mut inner_nonunimodal = false;
    let mut inner_low_edge = false;
    let mut inner_expansions = 0usize;

    let (alpha_lo, mut alpha_hi) = opts.alpha_bracket;
    let mut outer_expansions = 0usize;
    let outer = loop {
        let mut err: Option<CoreError> = None;
        let mut f = |alpha: f64| {
            match maximize_beta(alpha, samples, delta, noise_var, gamma, opts, &mut evals) {
                Ok(inner) => {
                    inner_nonunimodal |= !inner.unimodal;
                    inner_low_edge |= inner.at_lower_edge;
                    inner_expansions = inner_expansions.max(inner.expansions);
                    inner.value
                }
                Err(e) => {
                    err.get_or_insert(e);
                    f64::INFINITY
                }
            }
        };
        let res = golden_section_min(&mut f, alpha_lo, alpha_hi, opts.tol);
        if let Some(e) = err {
            return Err(e);
        }
        if res.at_upper_edge {
            if outer_expansions >= opts.max_expansions {
                return Err(CoreError::OptimumNotInterior {
                    axis: "alpha",
                    hi: alpha_hi,
                    expansions: outer_expansions,
                });
            }
            alpha_hi *= 2.0;
            outer_expansions += 1;
            continue;
        }
        break res;
    };

    let alpha = outer.x;
    let inner = maximize_beta(alpha, samples, delta, noise_var, gamma, opts, &mut evals)?;

    let mut notes: Vec<String> = Vec::new();
    if outer_expansions > 0 {
        notes.push(format!("alpha bracket expanded {outer_expansions}x"));
    }
    if inner_expansions > 0 {
        notes.push(format!("beta bracket expanded {inner_expansions}x"));
    }
    if outer.at_lower_edge {
        notes.push(format!("alpha minimizer at lower bracket edge {alpha_lo:.3e}"));
    }
    if inner_low_edge || inner.at_lower_edge {
        notes.push(format!(
            "beta maximizer at lower bracket edge {:.3e}",
            opts.beta_bracket.0
        ));
    }
    if !outer.unimodal {
        notes.push("outer profile over alpha not unimodal at probe resolution".into());
    }
    if inner_nonunimodal || !inner.unimodal {
        notes.push("inner profile over beta not unimodal at probe resolution".into());
    }
    let bracket_diagnostics = notes.join("; ");
    if !bracket_diagnostics.is_empty() {
        log::warn!("saddle search diagnostics: {bracket_diagnostics}");
    }

    Ok(SaddlePoint {
        alpha,
        beta: inner.beta,
        value: inner.value,
        evaluations: evals,
        bracket_diagnostics,
    })
}

/// Predicted per-coordinate MSE from the located saddle: `alpha*^2 - sigma_v^2`,
/// clamped at zero (the clamp is logged, since it signals the finite-sample
/// estimate dipped below the noise floor).
pub fn predicted_mse(saddle: &SaddlePoint, noise_var: f64) -> f64 {
    let raw = saddle.alpha * saddle.alpha - noise_var;
    if raw < 0.0 {
        log::warn!(
            "predicted MSE clamped to 0 (alpha*^2 = {:.6e} below noise variance {:.6e})",
            saddle.alpha * saddle.alpha,
            noise_var
        );
        0.0
    } else {
        raw
    }
}
