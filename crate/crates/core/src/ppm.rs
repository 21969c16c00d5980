//! Gridded NHPP and LGCP models for a single point pattern.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{chol, cov_matrix, mvn_logpdf, CholFactor, CovarianceModel};
use crate::grid::{assign_counts, CovariateTable, GridSpec, PointPattern, INTERCEPT};
use crate::mcmc::{
    diagnostics, run_chain, Block, ChainConfig, FactorCache, ParamPrior, PosteriorChain, PosteriorProgram,
    Prior, State,
};
use crate::rng::OdRng;
use crate::select::poisson_glm;

/// Largest log intensity accepted before the likelihood reports overflow.
pub const MAX_LOG_INTENSITY: f64 = 700.0;

/// Gridded Poisson log-likelihood
/// `−Σ_k λ_k Δ_k + Σ_k n_k log λ_k` with `log λ_k = X_k β + z_k`.
pub fn loglik_gridded(
    beta: &[f64],
    z: Option<&[f64]>,
    counts: &[f64],
    areas: &[f64],
    design: &DMatrix<f64>,
) -> Result<f64> {
    let k = counts.len();
    if areas.len() != k || design.nrows() != k || design.ncols() != beta.len() || z.is_some_and(|z| z.len() != k) {
        return Err(Error::Dimension(format!(
            "likelihood inputs: {} counts, {} areas, {}x{} design, {} coefficients, {} latent values",
            k,
            areas.len(),
            design.nrows(),
            design.ncols(),
            beta.len(),
            z.map_or(0, |z| z.len())
        )));
    }
    let xb = linear_predictor(design, beta);
    loglik_from_eta(&xb, z, counts, areas)
}

pub(crate) fn linear_predictor(design: &DMatrix<f64>, beta: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; design.nrows()];
    for (j, &b) in beta.iter().enumerate() {
        for (o, &x) in out.iter_mut().zip(design.column(j).iter()) {
            *o += x * b;
        }
    }
    out
}

pub(crate) fn loglik_from_eta(xb: &[f64], z: Option<&[f64]>, counts: &[f64], areas: &[f64]) -> Result<f64> {
    let mut ll = 0.0;
    for k in 0..xb.len() {
        let eta = match z {
            Some(z) => xb[k] + z[k],
            None => xb[k],
        };
        if eta > MAX_LOG_INTENSITY || eta.is_nan() {
            return Err(Error::Overflow {
                cell: k,
                log_intensity: eta,
            });
        }
        ll += -eta.exp() * areas[k];
        if counts[k] != 0.0 {
            ll += counts[k] * eta;
        }
    }
    Ok(ll)
}

/// Analytic gradient of [`loglik_gridded`] with respect to `(β, z)`.
pub fn loglik_gradient(
    beta: &[f64],
    z: Option<&[f64]>,
    counts: &[f64],
    areas: &[f64],
    design: &DMatrix<f64>,
) -> (Vec<f64>, Vec<f64>) {
    let xb = linear_predictor(design, beta);
    let resid: Vec<f64> = (0..counts.len())
        .map(|k| {
            let eta = xb[k] + z.map_or(0.0, |z| z[k]);
            counts[k] - eta.exp() * areas[k]
        })
        .collect();
    let gb = (0..beta.len())
        .map(|j| design.column(j).iter().zip(&resid).map(|(x, r)| x * r).sum())
        .collect();
    (gb, resid)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntensityKind {
    Nhpp,
    Lgcp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntensityPriors {
    pub beta: Prior,
    pub sigma2: Prior,
    pub phi: Prior,
}

impl Default for IntensityPriors {
    fn default() -> Self {
        Self {
            beta: Prior::Normal { mean: 0.0, variance: 100.0 },
            sigma2: Prior::InverseGamma { shape: 2.0, scale: 0.1 },
            phi: Prior::Uniform { lo: 0.0, hi: 10.0 },
        }
    }
}

/// How the regression coefficients are initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaInit {
    /// Poisson GLM estimate on the gridded counts, zero if it fails.
    #[default]
    Glm,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityModelSpec {
    pub kind: IntensityKind,
    /// Covariate columns besides the intercept, which is always included.
    pub covariates: Vec<String>,
    pub priors: IntensityPriors,
    pub init_sigma2: f64,
    pub init_phi: f64,
    pub init_beta: BetaInit,
}

impl IntensityModelSpec {
    pub fn new(kind: IntensityKind, covariates: Vec<String>) -> Self {
        Self {
            kind,
            covariates,
            priors: IntensityPriors::default(),
            init_sigma2: 0.1,
            init_phi: 1.0,
            init_beta: BetaInit::default(),
        }
    }

    /// Design columns: intercept first, then the selected covariates.
    pub fn columns(&self) -> Vec<String> {
        let mut cols = vec![INTERCEPT.to_string()];
        cols.extend(self.covariates.iter().filter(|c| *c != INTERCEPT).cloned());
        cols
    }

    pub fn design(&self, table: &CovariateTable) -> Result<DMatrix<f64>> {
        table.with_intercept().design(&self.columns())
    }

    pub fn validate(&self) -> Result<()> {
        self.priors.beta.validate()?;
        self.priors.sigma2.validate()?;
        self.priors.phi.validate()?;
        if !(self.init_sigma2 > 0.0) {
            return Err(Error::InvalidArgument("initial sigma2 must be positive".into()));
        }
        if self.priors.phi.log_density(self.init_phi) == f64::NEG_INFINITY {
            return Err(Error::InvalidArgument("initial phi lies outside its prior support".into()));
        }
        Ok(())
    }
}

pub fn beta_name(column: &str) -> String {
    format!("beta_{column}")
}

struct IntensityProgram {
    kind: IntensityKind,
    counts: Vec<f64>,
    areas: Vec<f64>,
    design: DMatrix<f64>,
    names: Vec<String>,
    reps: Vec<crate::grid::Point>,
    priors: IntensityPriors,
    init: Vec<f64>,
    cache: FactorCache,
    xb: Vec<f64>,
}

impl IntensityProgram {
    fn p(&self) -> usize {
        self.design.ncols()
    }

    fn factor(&mut self, sigma2: f64, phi: f64) -> Result<Arc<CholFactor>> {
        let reps = &self.reps;
        self.cache.get_or_try_insert(&[sigma2, phi], || {
            chol(&cov_matrix(reps, &CovarianceModel::Exponential { variance: sigma2, decay: phi })?)
        })
    }
}

fn reject_overflow(r: Result<f64>) -> Result<f64> {
    match r {
        Err(Error::Overflow { .. }) => Ok(f64::NEG_INFINITY),
        other => other,
    }
}

impl PosteriorProgram for IntensityProgram {
    fn scalar_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.names.iter().map(|n| beta_name(n)).collect();
        if self.kind == IntensityKind::Lgcp {
            names.push("sigma2".into());
            names.push("phi".into());
        }
        names
    }

    fn scalar_priors(&self) -> Vec<ParamPrior> {
        let mut p = vec![ParamPrior::new(self.priors.beta); self.p()];
        if self.kind == IntensityKind::Lgcp {
            p.push(ParamPrior::new(self.priors.sigma2));
            p.push(ParamPrior::new(self.priors.phi));
        }
        p
    }

    fn latent_names(&self) -> Vec<String> {
        match self.kind {
            IntensityKind::Nhpp => vec![],
            IntensityKind::Lgcp => vec!["z".into()],
        }
    }

    fn blocks(&self) -> Vec<Block> {
        let p = self.p();
        let beta = Block::RandomWalk {
            name: "beta".into(),
            params: (0..p).collect(),
        };
        match self.kind {
            IntensityKind::Nhpp => vec![beta],
            IntensityKind::Lgcp => vec![
                Block::Elliptical { latent: 0 },
                beta,
                Block::RandomWalk {
                    name: "sigma2".into(),
                    params: vec![p],
                },
                Block::RandomWalk {
                    name: "phi".into(),
                    params: vec![p + 1],
                },
            ]
            .into_iter()
            .chain(
                // β and z are confounded through Xβ + z; the centred draw moves along that ridge
                matches!(self.priors.beta, Prior::Normal { .. }).then(|| Block::Gibbs { name: "beta_centred".into() }),
            )
            .collect(),
        }
    }

    fn initial_state(&self) -> State {
        State {
            scalars: self.init.clone(),
            latents: match self.kind {
                IntensityKind::Nhpp => vec![],
                IntensityKind::Lgcp => vec![vec![0.0; self.counts.len()]],
            },
        }
    }

    fn block_log_density(&mut self, scalars: &[f64], latents: &[Vec<f64>], block: usize) -> Result<f64> {
        let p = self.p();
        let is_beta = match self.kind {
            IntensityKind::Nhpp => block == 0,
            IntensityKind::Lgcp => block == 1,
        };
        if is_beta {
            let z = latents.first().map(|z| z.as_slice());
            return reject_overflow(loglik_gridded(&scalars[..p], z, &self.counts, &self.areas, &self.design));
        }
        // GP hyperparameters: only the latent prior density depends on them
        let factor = self.factor(scalars[p], scalars[p + 1])?;
        Ok(mvn_logpdf(&latents[0], &factor))
    }

    fn latent_prior(&mut self, scalars: &[f64], _latent: usize) -> Result<Arc<CholFactor>> {
        let p = self.p();
        self.factor(scalars[p], scalars[p + 1])
    }

    fn prepare_latent(&mut self, scalars: &[f64], _latents: &[Vec<f64>], _latent: usize) -> Result<()> {
        self.xb = linear_predictor(&self.design, &scalars[..self.p()]);
        Ok(())
    }

    fn latent_log_lik(&self, _scalars: &[f64], _latents: &[Vec<f64>], _latent: usize, value: &[f64]) -> f64 {
        loglik_from_eta(&self.xb, Some(value), &self.counts, &self.areas).unwrap_or(f64::NEG_INFINITY)
    }

    /// `β | w` with `w = Xβ + z ~ N(Xβ, C)` is Gaussian; draw it and keep `w` fixed.
    fn gibbs_update(&mut self, state: &mut State, _block: usize, rng: &mut OdRng) -> Result<()> {
        let Prior::Normal { mean, variance } = self.priors.beta else {
            return Err(Error::Kernel("centred beta update needs a normal prior".into()));
        };
        let p = self.p();
        let factor = self.factor(state.scalars[p], state.scalars[p + 1])?;
        let beta = &state.scalars[..p];
        let w: Vec<f64> = linear_predictor(&self.design, beta)
            .iter()
            .zip(&state.latents[0])
            .map(|(xb, z)| xb + z)
            .collect();
        let a = factor
            .lower
            .solve_lower_triangular(&self.design)
            .expect("factor has positive diagonal");
        let lw = factor.whiten(&w);
        let mut q = a.transpose() * &a;
        for i in 0..p {
            q[(i, i)] += 1.0 / variance;
        }
        let rhs = a.transpose() * lw + DVector::from_element(p, mean / variance);
        let qc = q
            .cholesky()
            .ok_or_else(|| Error::Kernel("centred beta precision is not positive definite".into()))?;
        let mut draw = qc.solve(&rhs);
        let eps = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
        draw += qc.l().tr_solve_lower_triangular(&eps).expect("positive diagonal");
        let xb = &self.design * &draw;
        for (k, z) in state.latents[0].iter_mut().enumerate() {
            *z = w[k] - xb[k];
        }
        state.scalars[..p].copy_from_slice(draw.as_slice());
        Ok(())
    }

    fn data_log_lik(&mut self, state: &State) -> Result<f64> {
        let z = state.latents.first().map(|z| z.as_slice());
        loglik_gridded(&state.scalars[..self.p()], z, &self.counts, &self.areas, &self.design)
    }
}

/// Posterior sample of an NHPP or LGCP intensity model on `grid`.
pub fn fit_intensity(
    pattern: &PointPattern,
    grid: &GridSpec,
    covariates: &CovariateTable,
    spec: &IntensityModelSpec,
    config: &ChainConfig,
) -> Result<PosteriorChain> {
    spec.validate()?;
    if covariates.nrows() != grid.len() {
        return Err(Error::Dimension(format!(
            "covariate table has {} rows for {} cells",
            covariates.nrows(),
            grid.len()
        )));
    }
    let counts: Vec<f64> = assign_counts(pattern, grid)?.into_iter().map(|c| c as f64).collect();
    let areas = grid.std_areas();
    let design = spec.design(covariates)?;
    let p = design.ncols();
    let mut init = match spec.init_beta {
        BetaInit::Zero => vec![0.0; p],
        BetaInit::Glm => {
            let offset: Vec<f64> = areas.iter().map(|a| a.ln()).collect();
            match poisson_glm(&counts, &design, &offset) {
                Ok(fit) if fit.converged => fit.coefficients,
                _ => vec![0.0; p],
            }
        }
    };
    if spec.kind == IntensityKind::Lgcp {
        init.push(spec.init_sigma2);
        init.push(spec.init_phi);
    }
    let mut program = IntensityProgram {
        kind: spec.kind,
        counts,
        areas,
        design,
        names: spec.columns(),
        reps: grid.representatives(),
        priors: spec.priors,
        init,
        cache: FactorCache::default(),
        xb: Vec::new(),
    };
    run_chain(&mut program, config)
}

pub fn fit_nhpp(
    pattern: &PointPattern,
    grid: &GridSpec,
    covariates: &CovariateTable,
    covariate_names: &[String],
    config: &ChainConfig,
) -> Result<PosteriorChain> {
    let spec = IntensityModelSpec::new(IntensityKind::Nhpp, covariate_names.to_vec());
    fit_intensity(pattern, grid, covariates, &spec, config)
}

pub fn fit_lgcp(
    pattern: &PointPattern,
    grid: &GridSpec,
    covariates: &CovariateTable,
    covariate_names: &[String],
    config: &ChainConfig,
) -> Result<PosteriorChain> {
    let spec = IntensityModelSpec::new(IntensityKind::Lgcp, covariate_names.to_vec());
    fit_intensity(pattern, grid, covariates, &spec, config)
}

/// Per-cell intensity `λ_k = exp(X_k β + z_k)` of draw `index`. Coefficients
/// are the chain parameters named `beta_*`, in design-column order.
pub fn draw_intensity(chain: &PosteriorChain, index: usize, design: &DMatrix<f64>) -> Result<Vec<f64>> {
    let beta_idx: Vec<usize> = chain
        .param_names
        .iter()
        .enumerate()
        .filter(|(_, n)| n.starts_with("beta_"))
        .map(|(i, _)| i)
        .collect();
    if beta_idx.len() != design.ncols() {
        return Err(Error::Dimension(format!(
            "chain has {} coefficients, design has {} columns",
            beta_idx.len(),
            design.ncols()
        )));
    }
    let draw = &chain.draws[index];
    let beta: Vec<f64> = beta_idx.iter().map(|&i| draw.params[i]).collect();
    let mut eta = linear_predictor(design, &beta);
    if let Some(zi) = chain.latent_index("z") {
        let z = draw
            .latents
            .get(zi)
            .ok_or_else(|| Error::Dimension("chain was run without recording latent fields".into()))?;
        for (e, v) in eta.iter_mut().zip(z) {
            *e += v;
        }
    }
    Ok(eta.into_iter().map(f64::exp).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell_id: usize,
    pub mean: f64,
    pub sd: f64,
    pub lo95: f64,
    pub hi95: f64,
}

/// Posterior summaries of the intensity surface, one entry per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensitySurface {
    pub cells: Vec<CellSummary>,
}

pub fn posterior_intensity(chain: &PosteriorChain, design: &DMatrix<f64>) -> Result<IntensitySurface> {
    let k = design.nrows();
    let draws = (0..chain.len())
        .map(|i| draw_intensity(chain, i, design))
        .collect::<Result<Vec<_>>>()?;
    let cells = (0..k)
        .map(|c| {
            let mut vals: Vec<f64> = draws.iter().map(|d| d[c]).collect();
            let mean = diagnostics::mean(&vals);
            let sd = diagnostics::sd(&vals);
            vals.sort_by(f64::total_cmp);
            CellSummary {
                cell_id: c,
                mean,
                sd,
                lo95: diagnostics::quantile_sorted(&vals, 0.025),
                hi95: diagnostics::quantile_sorted(&vals, 0.975),
            }
        })
        .collect();
    Ok(IntensitySurface { cells })
}

/// Independent `Poisson(scale · λ_k Δ_k)` counts per cell.
pub fn sample_predictive_counts<R: Rng + ?Sized>(
    intensity: &[f64],
    grid: &GridSpec,
    scale: f64,
    rng: &mut R,
) -> Result<Vec<u64>> {
    if !(scale > 0.0) {
        return Err(Error::InvalidArgument(format!("predictive scale must be positive, got {scale}")));
    }
    if intensity.len() != grid.len() {
        return Err(Error::Dimension(format!(
            "{} intensities for {} cells",
            intensity.len(),
            grid.len()
        )));
    }
    intensity
        .iter()
        .zip(&grid.cells)
        .map(|(l, c)| poisson_draw(scale * l * c.std_area, rng))
        .collect()
}

pub(crate) fn poisson_draw<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> Result<u64> {
    if mean <= 0.0 {
        return Ok(0);
    }
    let d = Poisson::new(mean).map_err(|e| Error::InvalidArgument(format!("poisson mean {mean}: {e}")))?;
    Ok(d.sample(rng) as u64)
}

/// Scale converting a training intensity after p-thinning into the test intensity.
pub fn thinning_scale(p: f64) -> f64 {
    (1.0 - p) / p
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::BBox;
    use crate::rng::stream_rng;
    use approx::assert_relative_eq;
    use statrs::function::factorial::ln_factorial;

    fn random_instance(seed: u64, k: usize, p: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>, DMatrix<f64>, Vec<f64>) {
        let mut rng = stream_rng(seed, 0);
        let counts: Vec<f64> = (0..k).map(|_| rng.random_range(0..20) as f64).collect();
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.5..2.0)).collect();
        let tot: f64 = raw.iter().sum();
        let areas: Vec<f64> = raw.iter().map(|a| a / tot).collect();
        let design = DMatrix::from_fn(k, p, |_, j| if j == 0 { 1.0 } else { rng.random_range(-1.0..1.0) });
        let beta: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..3.0)).collect();
        let z: Vec<f64> = (0..k).map(|_| rng.random_range(-0.5..0.5)).collect();
        (counts, areas, beta, design, z)
    }

    #[test]
    fn intercept_only_closed_form() {
        let k = 7;
        let areas = vec![1.0 / k as f64; k];
        let counts = vec![3.0, 0.0, 1.0, 5.0, 2.0, 2.0, 0.0];
        let design = DMatrix::from_element(k, 1, 1.0);
        let b0 = 1.3_f64;
        let ll = loglik_gridded(&[b0], None, &counts, &areas, &design).unwrap();
        assert_relative_eq!(ll, -b0.exp() + 13.0 * b0, epsilon = 1e-12);
    }

    #[test]
    fn empty_counts() {
        let (_, areas, beta, design, z) = random_instance(1, 9, 2);
        let counts = vec![0.0; 9];
        let ll = loglik_gridded(&beta, Some(&z), &counts, &areas, &design).unwrap();
        let xb = linear_predictor(&design, &beta);
        let expected: f64 = (0..9).map(|k| -(xb[k] + z[k]).exp() * areas[k]).sum();
        assert_relative_eq!(ll, expected, epsilon = 1e-12);
    }

    #[test]
    fn matches_independent_poisson_masses() {
        let (counts, areas, beta, design, z) = random_instance(2, 12, 3);
        let ll = loglik_gridded(&beta, Some(&z), &counts, &areas, &design).unwrap();
        let xb = linear_predictor(&design, &beta);
        let mut poisson = 0.0;
        let mut constant = 0.0;
        for k in 0..12 {
            let mu = (xb[k] + z[k]).exp() * areas[k];
            poisson += counts[k] * mu.ln() - mu - ln_factorial(counts[k] as u64);
            constant += counts[k] * areas[k].ln() - ln_factorial(counts[k] as u64);
        }
        assert_relative_eq!(ll, poisson - constant, epsilon = 1e-9);
    }

    #[test]
    fn zero_latent_is_bitwise_nhpp() {
        let (counts, areas, beta, design, _) = random_instance(3, 10, 2);
        let a = loglik_gridded(&beta, None, &counts, &areas, &design).unwrap();
        let b = loglik_gridded(&beta, Some(&[0.0; 10]), &counts, &areas, &design).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn overflow_names_the_cell() {
        let design = DMatrix::from_element(3, 1, 1.0);
        let z = [0.0, 800.0, 0.0];
        let err = loglik_gridded(&[0.0], Some(&z), &[1.0; 3], &[1.0 / 3.0; 3], &design).unwrap_err();
        assert!(matches!(err, Error::Overflow { cell: 1, .. }));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (counts, areas, beta, design, z) = random_instance(4, 8, 3);
        let (gb, gz) = loglik_gradient(&beta, Some(&z), &counts, &areas, &design);
        let f = |b: &[f64], z: &[f64]| loglik_gridded(b, Some(z), &counts, &areas, &design).unwrap();
        let h = 1e-6;
        for j in 0..3 {
            let (mut up, mut dn) = (beta.clone(), beta.clone());
            up[j] += h;
            dn[j] -= h;
            let fd = (f(&up, &z) - f(&dn, &z)) / (2.0 * h);
            assert_relative_eq!(gb[j], fd, max_relative = 1e-5, epsilon = 1e-7);
        }
        for k in 0..8 {
            let (mut up, mut dn) = (z.clone(), z.clone());
            up[k] += h;
            dn[k] -= h;
            let fd = (f(&beta, &up) - f(&beta, &dn)) / (2.0 * h);
            assert_relative_eq!(gz[k], fd, max_relative = 1e-5, epsilon = 1e-7);
        }
    }

    #[test]
    fn adding_a_point_raises_the_latent_gradient() {
        let (mut counts, areas, beta, design, z) = random_instance(5, 6, 2);
        let (_, before) = loglik_gradient(&beta, Some(&z), &counts, &areas, &design);
        counts[2] += 1.0;
        let (_, after) = loglik_gradient(&beta, Some(&z), &counts, &areas, &design);
        assert!(after[2] > before[2]);
    }

    #[test]
    fn predictive_counts() {
        let grid = GridSpec::regular(BBox::new(0.0, 1.0, 0.0, 1.0).unwrap(), 2, 2).unwrap();
        let mut rng = stream_rng(8, 0);
        let zero = sample_predictive_counts(&[0.0; 4], &grid, 1.0, &mut rng).unwrap();
        assert_eq!(zero, vec![0; 4]);
        // e^{β0} Δ = 5
        let lam = vec![20.0; 4];
        let n = 10_000;
        let mut sums = [0u64; 4];
        for _ in 0..n {
            let c = sample_predictive_counts(&lam, &grid, 1.0, &mut rng).unwrap();
            for (s, v) in sums.iter_mut().zip(c) {
                *s += v;
            }
        }
        let se = (5.0 / n as f64).sqrt();
        for s in sums {
            assert!((s as f64 / n as f64 - 5.0).abs() < 3.0 * se);
        }
        assert!(sample_predictive_counts(&lam, &grid, 0.0, &mut rng).is_err());
        assert_eq!(thinning_scale(0.5), 1.0);
    }

    #[test]
    fn centred_beta_update_keeps_linear_predictor() {
        let grid = GridSpec::regular(BBox::new(0.0, 3.0, 0.0, 3.0).unwrap(), 3, 3).unwrap();
        let design = DMatrix::from_fn(9, 2, |i, j| if j == 0 { 1.0 } else { i as f64 / 4.0 - 1.0 });
        let mut program = IntensityProgram {
            kind: IntensityKind::Lgcp,
            counts: vec![3.0; 9],
            areas: grid.std_areas(),
            design: design.clone(),
            names: vec![INTERCEPT.into(), "x".into()],
            reps: grid.representatives(),
            priors: IntensityPriors::default(),
            init: vec![],
            cache: FactorCache::default(),
            xb: Vec::new(),
        };
        assert!(matches!(program.blocks().last(), Some(Block::Gibbs { .. })));
        let mut state = State {
            scalars: vec![1.0, -0.5, 0.4, 1.2],
            latents: vec![(0..9).map(|i| (i as f64).sin()).collect()],
        };
        let w = |s: &State| -> Vec<f64> {
            linear_predictor(&design, &s.scalars[..2]).iter().zip(&s.latents[0]).map(|(a, b)| a + b).collect()
        };
        let before = w(&state);
        program.gibbs_update(&mut state, 4, &mut stream_rng(9, 0)).unwrap();
        assert_ne!(state.scalars[0], 1.0);
        for (a, b) in before.iter().zip(w(&state)) {
            assert_relative_eq!(*a, b, epsilon = 1e-10);
        }
    }
}
