//! Dense Gaussian-process linear algebra.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Point;

/// Isotropic stationary covariance families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum CovarianceModel {
    /// `σ² exp(−φ d)`
    Exponential { variance: f64, decay: f64 },
    /// `σ² exp(−φ* d²)`
    SquaredExponential { variance: f64, decay: f64 },
}

impl CovarianceModel {
    pub fn exponential(variance: f64, decay: f64) -> Result<Self> {
        Self::Exponential { variance, decay }.validated()
    }

    /// Unit-variance squared-exponential kernel used for the kernel fields.
    pub fn squared_exponential(decay: f64) -> Result<Self> {
        Self::SquaredExponential { variance: 1.0, decay }.validated()
    }

    fn validated(self) -> Result<Self> {
        let (v, d) = (self.variance(), self.decay());
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidArgument(format!("covariance variance must be positive, got {v}")));
        }
        if !(d > 0.0 && d.is_finite()) {
            return Err(Error::InvalidArgument(format!("covariance decay must be positive, got {d}")));
        }
        Ok(self)
    }

    pub fn variance(&self) -> f64 {
        match *self {
            Self::Exponential { variance, .. } | Self::SquaredExponential { variance, .. } => variance,
        }
    }

    pub fn decay(&self) -> f64 {
        match *self {
            Self::Exponential { decay, .. } | Self::SquaredExponential { decay, .. } => decay,
        }
    }

    #[inline]
    pub fn eval(&self, a: &Point, b: &Point) -> f64 {
        match *self {
            Self::Exponential { variance, decay } => variance * (-decay * a.dist(b)).exp(),
            Self::SquaredExponential { variance, decay } => variance * (-decay * a.dist2(b)).exp(),
        }
    }
}

/// Covariance matrix of `model` over `points`; symmetric by construction.
pub fn cov_matrix(points: &[Point], model: &CovarianceModel) -> Result<DMatrix<f64>> {
    if let Some(i) = points.iter().position(|p| !p.is_finite()) {
        return Err(Error::InvalidArgument(format!("point {i} is not finite")));
    }
    Ok(cross_cov(points, points, model, true))
}

fn cross_cov(rows: &[Point], cols: &[Point], model: &CovarianceModel, symmetric: bool) -> DMatrix<f64> {
    let mut c = DMatrix::zeros(rows.len(), cols.len());
    if symmetric {
        let v = model.variance();
        for j in 0..cols.len() {
            c[(j, j)] = v;
            for i in (j + 1)..rows.len() {
                let e = model.eval(&rows[i], &cols[j]);
                c[(i, j)] = e;
                c[(j, i)] = e;
            }
        }
    } else {
        for j in 0..cols.len() {
            for i in 0..rows.len() {
                c[(i, j)] = model.eval(&rows[i], &cols[j]);
            }
        }
    }
    c
}

/// Jitter multipliers tried in order, relative to the jitter scale
/// (mean diagonal unless overridden).
pub const JITTER_LADDER: [f64; 5] = [0.0, 1e-10, 1e-8, 1e-6, 1e-4];

/// Lower-triangular Cholesky factor of `C + jitter·I`.
#[derive(Debug, Clone, PartialEq)]
pub struct CholFactor {
    pub lower: DMatrix<f64>,
    pub jitter_used: f64,
}

impl CholFactor {
    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    pub fn identity(k: usize) -> Self {
        Self {
            lower: DMatrix::identity(k, k),
            jitter_used: 0.0,
        }
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.lower.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// `L⁻¹ v`
    pub fn whiten(&self, v: &[f64]) -> DVector<f64> {
        let b = DVector::from_column_slice(v);
        self.lower
            .solve_lower_triangular(&b)
            .expect("factor has positive diagonal")
    }

    /// `(LLᵀ)⁻¹ B`
    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let y = self
            .lower
            .solve_lower_triangular(b)
            .expect("factor has positive diagonal");
        self.lower
            .tr_solve_lower_triangular(&y)
            .expect("factor has positive diagonal")
    }

    /// `L ε`
    pub fn colour(&self, eps: &[f64]) -> Vec<f64> {
        let k = self.dim();
        let mut out = vec![0.0; k];
        for j in 0..k {
            let e = eps[j];
            if e == 0.0 {
                continue;
            }
            let col = self.lower.column(j);
            for i in j..k {
                out[i] += col[i] * e;
            }
        }
        out
    }
}

/// Cholesky factor with the default jitter scale (mean diagonal).
pub fn chol(matrix: &DMatrix<f64>) -> Result<CholFactor> {
    let n = matrix.nrows();
    let scale = if n == 0 {
        0.0
    } else {
        matrix.diagonal().iter().sum::<f64>() / n as f64
    };
    chol_with_scale(matrix, scale)
}

/// Cholesky factor climbing `JITTER_LADDER · scale` until the pivots are positive.
pub fn chol_with_scale(matrix: &DMatrix<f64>, scale: f64) -> Result<CholFactor> {
    if !matrix.is_square() {
        return Err(Error::Dimension(format!(
            "cholesky of a {}x{} matrix",
            matrix.nrows(),
            matrix.ncols()
        )));
    }
    let n = matrix.nrows();
    let scale = scale.abs();
    let mut last = 0.0;
    for rung in JITTER_LADDER {
        let jitter = rung * scale;
        last = jitter;
        let mut a = matrix.clone();
        for i in 0..n {
            a[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(a) {
            let lower = c.unpack();
            if lower.diagonal().iter().all(|d| *d > 0.0 && d.is_finite()) {
                return Ok(CholFactor {
                    lower,
                    jitter_used: jitter,
                });
            }
        }
    }
    Err(Error::Factorization { jitter: last })
}

/// Draw `L ε` with `ε` i.i.d. standard normal from `rng`.
pub fn mvn_sample<R: Rng + ?Sized>(factor: &CholFactor, rng: &mut R) -> Vec<f64> {
    let eps: Vec<f64> = (0..factor.dim()).map(|_| rng.sample(StandardNormal)).collect();
    factor.colour(&eps)
}

/// Zero-mean Gaussian log-density with covariance `LLᵀ`.
pub fn mvn_logpdf(value: &[f64], factor: &CholFactor) -> f64 {
    let k = factor.dim() as f64;
    let w = factor.whiten(value);
    -0.5 * k * (2.0 * std::f64::consts::PI).ln() - 0.5 * factor.log_det() - 0.5 * w.norm_squared()
}

/// Precomputed simple kriging from a fixed training set to fixed test points.
///
/// The weights `C_tt⁻¹ c_t*` depend only on locations and the covariance
/// model, so they are computed once and reused for every posterior draw.
#[derive(Debug, Clone)]
pub struct Kriging {
    /// `n_train × n_test`
    weights: DMatrix<f64>,
    /// marginal conditional variance at each test point
    variances: Vec<f64>,
    cond_cov: DMatrix<f64>,
    prior_variance: f64,
}

impl Kriging {
    pub fn new(train: &[Point], test: &[Point], model: &CovarianceModel) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::InvalidArgument("kriging needs at least one training point".into()));
        }
        let ctt = cov_matrix(train, model)?;
        let factor = chol(&ctt)?;
        let cts = cross_cov(train, test, model, false);
        let weights = factor.solve(&cts);
        let mut cond = cov_matrix(test, model)?;
        cond -= cts.transpose() * &weights;
        // exact symmetry
        let h = test.len();
        for j in 0..h {
            for i in (j + 1)..h {
                let v = 0.5 * (cond[(i, j)] + cond[(j, i)]);
                cond[(i, j)] = v;
                cond[(j, i)] = v;
            }
        }
        let variances = (0..h).map(|i| cond[(i, i)].max(0.0)).collect();
        Ok(Self {
            weights,
            variances,
            cond_cov: cond,
            prior_variance: model.variance(),
        })
    }

    pub fn mean(&self, train_vals: &[f64]) -> Vec<f64> {
        let v = DVector::from_column_slice(train_vals);
        (self.weights.transpose() * v).iter().copied().collect()
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    /// Joint conditional covariance factor; the jitter scale is the prior variance.
    pub fn cond_factor(&self) -> Result<CholFactor> {
        chol_with_scale(&self.cond_cov, self.prior_variance)
    }
}

/// Kriging mean at `test_pts` and a factor of the conditional covariance.
pub fn gp_conditional(
    train_pts: &[Point],
    train_vals: &[f64],
    test_pts: &[Point],
    model: &CovarianceModel,
) -> Result<(Vec<f64>, CholFactor)> {
    if train_pts.len() != train_vals.len() {
        return Err(Error::Dimension(format!(
            "{} training values for {} training points",
            train_vals.len(),
            train_pts.len()
        )));
    }
    let k = Kriging::new(train_pts, test_pts, model)?;
    Ok((k.mean(train_vals), k.cond_factor()?))
}
