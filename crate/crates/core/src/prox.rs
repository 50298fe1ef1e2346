//! Proximity operators: the data-fidelity prox backed by a cached Cholesky
//! factorization, and element-wise proxes for separable regularizers.

use std::fmt;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{CoreError, Result};

/// Which normal-equation system gets factored.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FactorizationPath {
    /// Factor `A^T A + (1/gamma) I` (N x N); used when M >= N.
    Direct,
    /// Factor `A A^T + (1/gamma) I` (M x M) and expand through the matrix
    /// inversion lemma; used when M < N.
    Woodbury,
}

/// Proximity operator of `gamma * (1/2) ||y - A s||^2`.
///
/// `apply(z)` returns the minimizer of `(1/2)||y - A s||^2 + (1/(2 gamma)) ||s - z||^2`,
/// i.e. `(A^T A + (1/gamma) I)^{-1} (A^T y + z / gamma)`. The positive
/// definite system is factored once at construction and reused for every
/// iteration; no inverse is ever formed explicitly.
pub struct SquaredLossProx {
    a: DMatrix<f64>,
    aty: DVector<f64>,
    gamma: f64,
    path: FactorizationPath,
    factor: Cholesky<f64, Dyn>,
}

impl fmt::Debug for SquaredLossProx {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SquaredLossProx")
            .field("m", &self.a.nrows())
            .field("n", &self.a.ncols())
            .field("gamma", &self.gamma)
            .field("path", &self.path)
            .finish_non_exhaustive()
    }
}

impl SquaredLossProx {
    pub fn new(a: DMatrix<f64>, y: &DVector<f64>, gamma: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(CoreError::InvalidConfig(format!(
                "gamma must be positive, got {gamma}"
            )));
        }
        let (m, n) = (a.nrows(), a.ncols());
        if m == 0 || n == 0 {
            return Err(CoreError::InvalidConfig(format!(
                "matrix must be nonempty, got {m} x {n}"
            )));
        }
        if y.len() != m {
            return Err(CoreError::LengthMismatch {
                what: "observation vector",
                expected: m,
                got: y.len(),
            });
        }

        let c = 1.0 / gamma;
        let path = if m < n {
            FactorizationPath::Woodbury
        } else {
            FactorizationPath::Direct
        };
        let mut gram = match path {
            FactorizationPath::Direct => a.tr_mul(&a),
            FactorizationPath::Woodbury => &a * a.transpose(),
        };
        for i in 0..gram.nrows() {
            gram[(i, i)] += c;
        }
        let factor = Cholesky::new(gram).ok_or_else(|| {
            let bad = a.iter().filter(|e| !e.is_finite()).count()
                + y.iter().filter(|e| !e.is_finite()).count();
            CoreError::Factorization {
                diagnostic: format!(
                    "shifted Gram matrix not positive definite ({m} x {n} input, shift {c:.3e}, \
                     {bad} non-finite entries); impossible for finite input with gamma > 0"
                ),
            }
        })?;
        let aty = a.tr_mul(y);
        Ok(Self { a, aty, gamma, path, factor })
    }

    pub fn path(&self) -> FactorizationPath {
        self.path
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Evaluates the prox at `z`.
    pub fn apply(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        let n = self.a.ncols();
        if z.len() != n {
            return Err(CoreError::LengthMismatch {
                what: "prox input",
                expected: n,
                got: z.len(),
            });
        }
        if z.iter().any(|e| !e.is_finite()) {
            return Err(CoreError::NonFiniteInput("squared-loss prox input".into()));
        }

        let c = 1.0 / self.gamma;
        let w = &self.aty + z * c;
        let s = match self.path {
            FactorizationPath::Direct => self.factor.solve(&w),
            FactorizationPath::Woodbury => {
                // (A^T A + cI)^{-1} w = (w - A^T (A A^T + cI)^{-1} A w) / c
                let aw = &self.a * &w;
                let t = self.factor.solve(&aw);
                (&w - self.a.tr_mul(&t)) * self.gamma
            }
        };

        #[cfg(debug_assertions)]
        self.debug_check_stationarity(&s, z);

        Ok(s)
    }

    #[cfg(debug_assertions)]
    fn debug_check_stationarity(&self, s: &DVector<f64>, z: &DVector<f64>) {
        let residual = &self.a * s;
        let grad = self.a.tr_mul(&residual) - &self.aty + (s - z) / self.gamma;
        let sup = grad.iter().fold(0.0f64, |acc, g| acc.max(g.abs()));
        let zmax = z.iter().fold(0.0f64, |acc, e| acc.max(e.abs()));
        debug_assert!(
            sup <= 1e-8 * (1.0 + zmax),
            "prox stationarity violated: |grad|_inf = {sup:.3e}"
        );
    }
}

/// Scalar soft threshold, the prox of `theta * |.|`.
pub fn soft_threshold(r: f64, theta: f64) -> f64 {
    debug_assert!(theta >= 0.0, "negative threshold {theta}");
    if r > theta {
        r - theta
    } else if r < -theta {
        r + theta
    } else {
        0.0
    }
}

/// Separable regularizer, described by its scalar prox.
#[derive(Clone)]
pub enum Regularizer {
    /// l1 norm; scalar prox is the soft threshold.
    L1,
    /// User-supplied scalar prox `(t, threshold) -> value`.
    Custom {
        scalar_prox: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
        label: String,
    },
}

impl fmt::Debug for Regularizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Regularizer::L1 => f.write_str("L1"),
            Regularizer::Custom { label, .. } => write!(f, "Custom({label})"),
        }
    }
}

impl Regularizer {
    /// Scalar prox at threshold scale `theta`.
    pub fn scalar_prox(&self, t: f64, theta: f64) -> f64 {
        match self {
            Regularizer::L1 => soft_threshold(t, theta),
            Regularizer::Custom { scalar_prox, .. } => scalar_prox(t, theta),
        }
    }
}

/// Applies the scalar prox coordinate-wise.
pub fn prox_separable(reg: &Regularizer, r: &DVector<f64>, theta: f64) -> DVector<f64> {
    r.map(|t| reg.scalar_prox(t, theta))
}
