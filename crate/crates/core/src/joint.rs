//! Joint intensity over theft–recovery pairs on a `K × K` grid.
//!
//! With `u_k` the cell representatives,
//!
//! ```text
//! log λ(u_k, u_k') = β0 + X_R[k]β_R + X_T[k']β_T + η q(k, k') + z_R[k] + z_T[k']
//! q(k, k')         = (u_k − u_k')ᵀ Σ(u_k')⁻¹ (u_k − u_k')
//! ```
//!
//! where row `k` is the recovery cell, column `k'` the theft cell, and `Σ` the
//! spatially varying kernel of [`crate::recovery`]. Matrices indexed by
//! `(k, k')` are stored column-major: entry `k' * K + k`.

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{chol, cov_matrix, mvn_logpdf, CholFactor, CovarianceModel};
use crate::grid::{CovariateTable, GridKind, GridSpec, PairedPattern, Point};
use crate::mcmc::{
    diagnostics, run_chain, Block, ChainConfig, FactorCache, ParamPrior, PosteriorChain, PosteriorProgram,
    Prior, State,
};
use crate::ppm::MAX_LOG_INTENSITY;
use crate::recovery::{psi_prior_factor, sigma_from_psi, SpatialKernelSpec};

/// Pairs below which the latent fields are poorly informed.
pub const MIN_INFORMATIVE_PAIRS: usize = 500;

/// `n[k, k']`: complete pairs recovered in cell `k` and stolen in cell `k'`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairCountsMatrix {
    k: usize,
    /// column-major, see module docs
    counts: Vec<u64>,
}

impl PairCountsMatrix {
    pub fn zeros(k: usize) -> Self {
        Self {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn dim(&self) -> usize {
        self.k
    }

    pub fn get(&self, recovery_cell: usize, theft_cell: usize) -> u64 {
        self.counts[theft_cell * self.k + recovery_cell]
    }

    pub fn add(&mut self, recovery_cell: usize, theft_cell: usize, n: u64) {
        self.counts[theft_cell * self.k + recovery_cell] += n;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Pairs per recovery cell.
    pub fn recovery_totals(&self) -> Vec<u64> {
        let mut out = vec![0; self.k];
        for (i, &n) in self.counts.iter().enumerate() {
            out[i % self.k] += n;
        }
        out
    }

    /// Pairs per theft cell.
    pub fn theft_totals(&self) -> Vec<u64> {
        self.counts.chunks(self.k.max(1)).map(|c| c.iter().sum()).collect()
    }

    /// `(recovery_cell, theft_cell, n)` for every nonzero entry.
    pub fn nonzero(&self) -> Vec<(usize, usize, u64)> {
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, &n)| n > 0)
            .map(|(i, &n)| (i % self.k, i / self.k, n))
            .collect()
    }
}

fn cell_for(grid: &GridSpec, p: &Point, index: usize) -> Result<usize> {
    match grid.kind {
        GridKind::Regular { .. } => grid.locate(p).ok_or(Error::Assignment { index, x: p.x, y: p.y }),
        GridKind::Membership => Ok(grid.nearest(p)),
    }
}

/// Two-dimensional histogram of the complete pairs. On a membership grid
/// endpoints go to the cell with the nearest representative point.
pub fn pair_counts(pairs: &PairedPattern, grid: &GridSpec) -> Result<PairCountsMatrix> {
    let mut m = PairCountsMatrix::zeros(grid.len());
    for i in pairs.complete_indices() {
        let t = cell_for(grid, &pairs.thefts[i], i)?;
        let r = cell_for(grid, &pairs.recoveries[i].expect("complete pair"), i)?;
        m.add(r, t, 1);
    }
    Ok(m)
}

/// Model variant: without (`Ind`, `η ≡ 0`) or with (`Dep`) the distance term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointVariant {
    Ind,
    Dep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JointPriors {
    pub beta: Prior,
    pub eta: Prior,
    pub sigma2: Prior,
    pub phi: Prior,
}

impl Default for JointPriors {
    fn default() -> Self {
        Self {
            beta: Prior::Normal {
                mean: 0.0,
                variance: 100.0,
            },
            eta: Prior::Normal {
                mean: 0.0,
                variance: 100.0,
            },
            sigma2: Prior::InverseGamma { shape: 2.0, scale: 0.1 },
            phi: Prior::Uniform { lo: 0.0, hi: 10.0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointModelSpec {
    pub variant: JointVariant,
    #[serde(default)]
    pub covariates_r: Vec<String>,
    #[serde(default)]
    pub covariates_t: Vec<String>,
    #[serde(default)]
    pub priors: JointPriors,
    /// Prior decay of `ψx, ψy`.
    pub kernel: SpatialKernelSpec,
    /// Scale `σ` of the kernel inside the distance term. It is confounded with
    /// `η` (only `η/σ²` enters the likelihood), so it is held fixed.
    pub kernel_sigma: f64,
}

impl JointModelSpec {
    pub fn new(variant: JointVariant) -> Self {
        Self {
            variant,
            covariates_r: vec![],
            covariates_t: vec![],
            priors: JointPriors::default(),
            kernel: SpatialKernelSpec::new(1.0),
            kernel_sigma: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for p in [self.priors.beta, self.priors.eta, self.priors.sigma2, self.priors.phi] {
            p.validate()?;
        }
        self.kernel.validate()?;
        if !(self.kernel_sigma > 0.0 && self.kernel_sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "kernel sigma must be positive (got {})",
                self.kernel_sigma
            )));
        }
        Ok(())
    }

    pub fn scalar_names(&self) -> Vec<String> {
        let mut n = vec!["beta0".to_string()];
        n.extend(self.covariates_r.iter().map(|c| format!("beta_R_{c}")));
        n.extend(self.covariates_t.iter().map(|c| format!("beta_T_{c}")));
        if self.variant == JointVariant::Dep {
            n.push("eta".into());
        }
        n.extend(["sigma2_R", "phi_R", "sigma2_T", "phi_T"].map(String::from));
        n
    }

    pub fn latent_names(&self) -> Vec<String> {
        let mut n = vec!["z_R".to_string(), "z_T".to_string()];
        if self.variant == JointVariant::Dep {
            n.extend(["psi_x", "psi_y"].map(String::from));
        }
        n
    }
}

/// Values of the joint log-intensity parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct JointParams {
    pub beta0: f64,
    pub beta_r: Vec<f64>,
    pub beta_t: Vec<f64>,
    pub eta: f64,
    pub z_r: Vec<f64>,
    pub z_t: Vec<f64>,
    /// `(ψx, ψy)` at the cell representatives; needed when `η ≠ 0`.
    pub psi: Option<(Vec<f64>, Vec<f64>)>,
}

impl JointParams {
    /// Constant intensity `e^{β0}` over `k` cells.
    pub fn constant(beta0: f64, k: usize) -> Self {
        Self {
            beta0,
            beta_r: vec![],
            beta_t: vec![],
            eta: 0.0,
            z_r: vec![0.0; k],
            z_t: vec![0.0; k],
            psi: None,
        }
    }
}

/// Grid geometry, designs, and model spec: everything fixed across draws.
#[derive(Debug, Clone)]
pub struct JointModel {
    pub spec: JointModelSpec,
    pub reps: Vec<Point>,
    pub areas: Vec<f64>,
    pub x_r: DMatrix<f64>,
    pub x_t: DMatrix<f64>,
}

impl JointModel {
    pub fn new(grid: &GridSpec, covariates: Option<&CovariateTable>, spec: &JointModelSpec) -> Result<Self> {
        spec.validate()?;
        let k = grid.len();
        let design = |names: &[String]| -> Result<DMatrix<f64>> {
            if names.is_empty() {
                return Ok(DMatrix::zeros(k, 0));
            }
            let t = covariates.ok_or_else(|| Error::Covariate("covariates requested without a table".into()))?;
            if t.nrows() != k {
                return Err(Error::Dimension(format!("covariate table has {} rows for {k} cells", t.nrows())));
            }
            t.design(names)
        };
        Ok(Self {
            spec: spec.clone(),
            reps: grid.representatives(),
            areas: grid.std_areas(),
            x_r: design(&spec.covariates_r)?,
            x_t: design(&spec.covariates_t)?,
        })
    }

    pub fn k(&self) -> usize {
        self.reps.len()
    }

    /// Distance-term matrix `q(k, k')` for a `ψ` field at the representatives.
    pub fn quad_matrix(&self, psi_x: &[f64], psi_y: &[f64]) -> Vec<f64> {
        quad_matrix(&self.reps, psi_x, psi_y, self.spec.kernel_sigma, self.spec.kernel.a)
    }

    fn additive(&self, p: &JointParams) -> Result<(Vec<f64>, Vec<f64>)> {
        let k = self.k();
        if p.z_r.len() != k || p.z_t.len() != k || p.beta_r.len() != self.x_r.ncols() || p.beta_t.len() != self.x_t.ncols()
        {
            return Err(Error::Dimension("joint parameters do not match the model".into()));
        }
        let mut a = p.z_r.clone();
        let mut b = p.z_t.clone();
        for i in 0..k {
            a[i] += p.beta0 + (0..p.beta_r.len()).map(|j| self.x_r[(i, j)] * p.beta_r[j]).sum::<f64>();
            b[i] += (0..p.beta_t.len()).map(|j| self.x_t[(i, j)] * p.beta_t[j]).sum::<f64>();
        }
        Ok((a, b))
    }

    fn quad_for(&self, p: &JointParams) -> Result<Option<Vec<f64>>> {
        if p.eta == 0.0 {
            return Ok(None);
        }
        match &p.psi {
            Some((x, y)) if x.len() == self.k() && y.len() == self.k() => Ok(Some(self.quad_matrix(x, y))),
            Some(_) => Err(Error::Dimension("psi fields do not match the grid".into())),
            None => Err(Error::InvalidArgument("eta is nonzero but no psi field was given".into())),
        }
    }

    /// `log λ(u_k, u_k')`, column-major.
    pub fn log_intensity(&self, p: &JointParams) -> Result<Vec<f64>> {
        let (a, b) = self.additive(p)?;
        let q = self.quad_for(p)?;
        let k = self.k();
        let mut out = vec![0.0; k * k];
        out.par_chunks_mut(k.max(1)).enumerate().for_each(|(kt, col)| {
            for (kr, v) in col.iter_mut().enumerate() {
                let dist = q.as_ref().map_or(0.0, |q| p.eta * q[kt * k + kr]);
                *v = a[kr] + b[kt] + dist;
            }
        });
        Ok(out)
    }

    /// Joint log-likelihood of `counts` at `p`.
    pub fn loglik(&self, p: &JointParams, counts: &PairCountsMatrix) -> Result<f64> {
        if counts.dim() != self.k() {
            return Err(Error::Dimension(format!(
                "pair counts are {0}x{0} for {1} cells",
                counts.dim(),
                self.k()
            )));
        }
        let (a, b) = self.additive(p)?;
        let q = self.quad_for(p)?;
        loglik_ab(&a, &b, p.eta, q.as_deref(), &counts.nonzero(), &self.areas)
    }

    /// Parameters of kept draw `index` of a chain from [`fit_joint`].
    pub fn params_from_draw(&self, chain: &PosteriorChain, index: usize) -> Result<JointParams> {
        let d = chain
            .draws
            .get(index)
            .ok_or_else(|| Error::InvalidArgument(format!("draw {index} of {}", chain.len())))?;
        let find = |n: &str| chain.param_index(n).ok_or_else(|| Error::Data(format!("chain has no `{n}`")));
        let lat = |n: &str| -> Result<Vec<f64>> {
            let i = chain.latent_index(n).ok_or_else(|| Error::Data(format!("chain has no `{n}`")))?;
            d.latents
                .get(i)
                .cloned()
                .ok_or_else(|| Error::Data("chain was run without recording latent fields".into()))
        };
        let spec = &self.spec;
        let beta_r = spec
            .covariates_r
            .iter()
            .map(|c| find(&format!("beta_R_{c}")).map(|i| d.params[i]))
            .collect::<Result<_>>()?;
        let beta_t = spec
            .covariates_t
            .iter()
            .map(|c| find(&format!("beta_T_{c}")).map(|i| d.params[i]))
            .collect::<Result<_>>()?;
        let (eta, psi) = match spec.variant {
            JointVariant::Ind => (0.0, None),
            JointVariant::Dep => (d.params[find("eta")?], Some((lat("psi_x")?, lat("psi_y")?))),
        };
        Ok(JointParams {
            beta0: d.params[find("beta0")?],
            beta_r,
            beta_t,
            eta,
            z_r: lat("z_R")?,
            z_t: lat("z_T")?,
            psi,
        })
    }
}

/// `q(k, k')` with `Σ(u_k')` from `ψ` at `u_k'`.
pub fn quad_matrix(reps: &[Point], psi_x: &[f64], psi_y: &[f64], sigma: f64, a: f64) -> Vec<f64> {
    let k = reps.len();
    let mut q = vec![0.0; k * k];
    q.par_chunks_mut(k.max(1)).enumerate().for_each(|(kt, col)| {
        let s = sigma_from_psi(psi_x[kt], psi_y[kt], sigma, a);
        let t = reps[kt];
        for (kr, v) in col.iter_mut().enumerate() {
            *v = s.inv_quad((reps[kr].x - t.x, reps[kr].y - t.y));
        }
    });
    q
}

/// Likelihood from the additive row terms `a`, column terms `b`, and `η q`.
///
/// Columns are summed in parallel, each serially, and the column totals
/// serially in index order, so the value does not depend on the thread count.
fn loglik_ab(
    a: &[f64],
    b: &[f64],
    eta: f64,
    q: Option<&[f64]>,
    nonzero: &[(usize, usize, u64)],
    areas: &[f64],
) -> Result<f64> {
    let k = a.len();
    let cols: Vec<std::result::Result<f64, (usize, f64)>> = (0..k)
        .into_par_iter()
        .map(|kt| {
            let mut s = 0.0;
            for kr in 0..k {
                let l = a[kr] + b[kt] + q.map_or(0.0, |q| eta * q[kt * k + kr]);
                if l > MAX_LOG_INTENSITY {
                    return Err((kt * k + kr, l));
                }
                s += areas[kr] * l.exp();
            }
            Ok(s * areas[kt])
        })
        .collect();
    let mut integral = 0.0;
    for c in cols {
        match c {
            Ok(v) => integral += v,
            Err((cell, log_intensity)) => return Err(Error::Overflow { cell, log_intensity }),
        }
    }
    let mut point = 0.0;
    for &(kr, kt, n) in nonzero {
        point += n as f64 * (a[kr] + b[kt] + q.map_or(0.0, |q| eta * q[kt * k + kr]));
    }
    Ok(point - integral)
}

/// Joint log-likelihood at explicit parameter values.
pub fn joint_loglik(
    params: &JointParams,
    counts: &PairCountsMatrix,
    grid: &GridSpec,
    covariates: Option<&CovariateTable>,
    spec: &JointModelSpec,
) -> Result<f64> {
    JointModel::new(grid, covariates, spec)?.loglik(params, counts)
}

struct JointProgram {
    model: JointModel,
    nonzero: Vec<(usize, usize, u64)>,
    n_r: Vec<f64>,
    n_t: Vec<f64>,
    psi_prior: Option<Arc<CholFactor>>,
    cache_r: FactorCache,
    cache_t: FactorCache,
    init: Vec<f64>,
    /// last `(ψx, ψy)` and its distance matrix
    q_cache: Option<(Vec<f64>, Vec<f64>, Arc<Vec<f64>>)>,
    /// row or column weights and max exponents prepared for a z update
    prepared: (Vec<f64>, Vec<f64>, Vec<f64>),
}

impl JointProgram {
    fn p_r(&self) -> usize {
        self.model.x_r.ncols()
    }

    fn p_t(&self) -> usize {
        self.model.x_t.ncols()
    }

    fn dep(&self) -> bool {
        self.model.spec.variant == JointVariant::Dep
    }

    fn n_beta(&self) -> usize {
        1 + self.p_r() + self.p_t()
    }

    fn eta(&self, s: &[f64]) -> f64 {
        if self.dep() {
            s[self.n_beta()]
        } else {
            0.0
        }
    }

    /// Index of `sigma2_R`.
    fn hyper(&self) -> usize {
        self.n_beta() + usize::from(self.dep())
    }

    fn params(&self, s: &[f64], latents: &[Vec<f64>]) -> JointParams {
        let pr = self.p_r();
        JointParams {
            beta0: s[0],
            beta_r: s[1..1 + pr].to_vec(),
            beta_t: s[1 + pr..self.n_beta()].to_vec(),
            eta: self.eta(s),
            z_r: latents[0].clone(),
            z_t: latents[1].clone(),
            psi: None,
        }
    }

    fn quad(&mut self, latents: &[Vec<f64>]) -> Option<Arc<Vec<f64>>> {
        if !self.dep() {
            return None;
        }
        let (px, py) = (&latents[2], &latents[3]);
        if let Some((x, y, q)) = &self.q_cache {
            if x == px && y == py {
                return Some(Arc::clone(q));
            }
        }
        let q = Arc::new(self.model.quad_matrix(px, py));
        self.q_cache = Some((px.clone(), py.clone(), Arc::clone(&q)));
        Some(q)
    }

    fn full_loglik(&mut self, s: &[f64], latents: &[Vec<f64>]) -> Result<f64> {
        let q = self.quad(latents);
        let (a, b) = self.model.additive(&self.params(s, latents))?;
        loglik_ab(&a, &b, self.eta(s), q.as_deref().map(|v| v.as_slice()), &self.nonzero, &self.model.areas)
    }

    fn factor(&mut self, field: usize, sigma2: f64, phi: f64) -> Result<Arc<CholFactor>> {
        let reps = &self.model.reps;
        let cache = if field == 0 { &mut self.cache_r } else { &mut self.cache_t };
        cache.get_or_try_insert(&[sigma2, phi], || {
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

impl PosteriorProgram for JointProgram {
    fn scalar_names(&self) -> Vec<String> {
        self.model.spec.scalar_names()
    }

    fn scalar_priors(&self) -> Vec<ParamPrior> {
        let pr = &self.model.spec.priors;
        let mut p = vec![ParamPrior::new(pr.beta); self.n_beta()];
        if self.dep() {
            p.push(ParamPrior::new(pr.eta));
        }
        for _ in 0..2 {
            p.push(ParamPrior::new(pr.sigma2));
            p.push(ParamPrior::new(pr.phi));
        }
        p
    }

    fn latent_names(&self) -> Vec<String> {
        self.model.spec.latent_names()
    }

    fn blocks(&self) -> Vec<Block> {
        let mut b = vec![Block::Elliptical { latent: 0 }, Block::Elliptical { latent: 1 }];
        if self.dep() {
            b.push(Block::Elliptical { latent: 2 });
            b.push(Block::Elliptical { latent: 3 });
        }
        b.push(Block::RandomWalk {
            name: "beta".into(),
            params: (0..self.n_beta()).collect(),
        });
        if self.dep() {
            b.push(Block::RandomWalk {
                name: "eta".into(),
                params: vec![self.n_beta()],
            });
        }
        let h = self.hyper();
        for (i, n) in ["sigma2_R", "phi_R", "sigma2_T", "phi_T"].iter().enumerate() {
            b.push(Block::RandomWalk {
                name: (*n).into(),
                params: vec![h + i],
            });
        }
        b
    }

    fn initial_state(&self) -> State {
        let k = self.model.k();
        let n_lat = if self.dep() { 4 } else { 2 };
        State {
            scalars: self.init.clone(),
            latents: vec![vec![0.0; k]; n_lat],
        }
    }

    fn block_log_density(&mut self, scalars: &[f64], latents: &[Vec<f64>], block: usize) -> Result<f64> {
        let n_ess = if self.dep() { 4 } else { 2 };
        let rw = block - n_ess;
        let n_reg = 1 + usize::from(self.dep());
        if rw < n_reg {
            return reject_overflow(self.full_loglik(scalars, latents));
        }
        // GP hyperparameters of z_R (rw − n_reg = 0, 1) or z_T (2, 3)
        let field = (rw - n_reg) / 2;
        let h = self.hyper() + 2 * field;
        let f = self.factor(field, scalars[h], scalars[h + 1])?;
        Ok(mvn_logpdf(&latents[field], &f))
    }

    fn latent_prior(&mut self, scalars: &[f64], latent: usize) -> Result<Arc<CholFactor>> {
        if latent >= 2 {
            return Ok(Arc::clone(self.psi_prior.as_ref().expect("dependent variant has a psi prior")));
        }
        let h = self.hyper() + 2 * latent;
        self.factor(latent, scalars[h], scalars[h + 1])
    }

    fn prepare_latent(&mut self, scalars: &[f64], latents: &[Vec<f64>], latent: usize) -> Result<()> {
        if latent >= 2 {
            return Ok(());
        }
        let q = self.quad(latents);
        let (a, b) = self.model.additive(&self.params(scalars, latents))?;
        let eta = self.eta(scalars);
        let k = self.model.k();
        let areas = &self.model.areas;
        // for z_R: weight of row k is Σ_k' Δ_k' exp(b_k' + η q); the base is a − z_R
        // for z_T: weight of column k' is Σ_k Δ_k exp(a_k + η q); the base is b − z_T
        let (other, base) = if latent == 0 { (&b, &a) } else { (&a, &b) };
        let field = &latents[latent];
        let mut weights = vec![0.0; k];
        let mut maxes = vec![f64::NEG_INFINITY; k];
        for i in 0..k {
            let mut w = 0.0;
            let mut mx = f64::NEG_INFINITY;
            for j in 0..k {
                let (kr, kt) = if latent == 0 { (i, j) } else { (j, i) };
                let l = other[j] + q.as_ref().map_or(0.0, |q| eta * q[kt * k + kr]);
                mx = mx.max(l);
                w += areas[j] * l.exp();
            }
            weights[i] = w;
            maxes[i] = mx;
        }
        let base: Vec<f64> = base.iter().zip(field).map(|(v, z)| v - z).collect();
        self.prepared = (weights, maxes, base);
        Ok(())
    }

    fn latent_log_lik(&self, scalars: &[f64], latents: &[Vec<f64>], latent: usize, value: &[f64]) -> f64 {
        if latent >= 2 {
            let mut l = latents.to_vec();
            l[latent] = value.to_vec();
            let q = self.model.quad_matrix(&l[2], &l[3]);
            let Ok((a, b)) = self.model.additive(&self.params(scalars, &l)) else {
                return f64::NEG_INFINITY;
            };
            return loglik_ab(&a, &b, self.eta(scalars), Some(&q), &self.nonzero, &self.model.areas)
                .unwrap_or(f64::NEG_INFINITY);
        }
        let (weights, maxes, base) = &self.prepared;
        let counts = if latent == 0 { &self.n_r } else { &self.n_t };
        let mut ll = 0.0;
        for i in 0..value.len() {
            let v = base[i] + value[i];
            if v + maxes[i] > MAX_LOG_INTENSITY {
                return f64::NEG_INFINITY;
            }
            ll += counts[i] * v - self.model.areas[i] * v.exp() * weights[i];
        }
        ll
    }

    fn data_log_lik(&mut self, state: &State) -> Result<f64> {
        self.full_loglik(&state.scalars, &state.latents)
    }
}

/// Posterior sample of the joint model from the complete pairs.
pub fn fit_joint(
    pairs: &PairedPattern,
    grid: &GridSpec,
    covariates: Option<&CovariateTable>,
    spec: &JointModelSpec,
    config: &ChainConfig,
) -> Result<PosteriorChain> {
    let model = JointModel::new(grid, covariates, spec)?;
    let counts = pair_counts(pairs, grid)?;
    let m = counts.total();
    if m == 0 {
        return Err(Error::Data("joint fit needs at least one complete pair".into()));
    }
    let n_r = counts.recovery_totals().into_iter().map(|n| n as f64).collect();
    let n_t = counts.theft_totals().into_iter().map(|n| n as f64).collect();
    let psi_prior = match spec.variant {
        JointVariant::Dep => Some(Arc::new(psi_prior_factor(&model.reps, &spec.kernel)?)),
        JointVariant::Ind => None,
    };
    // β0 = log m matches the total count when everything else is zero (ΣΔ = 1)
    let mut init = vec![(m as f64).ln()];
    init.resize(1 + model.x_r.ncols() + model.x_t.ncols(), 0.0);
    if spec.variant == JointVariant::Dep {
        init.push(0.0);
    }
    init.extend([0.1, 1.0, 0.1, 1.0]);
    let mut program = JointProgram {
        model,
        nonzero: counts.nonzero(),
        n_r,
        n_t,
        psi_prior,
        cache_r: FactorCache::default(),
        cache_t: FactorCache::default(),
        init,
        q_cache: None,
        prepared: Default::default(),
    };
    run_chain(&mut program, config)
}

/// Subregions of the destination domain; together they cover every cell once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub ids: Vec<String>,
    pub sets: Vec<Vec<usize>>,
}

impl Partition {
    pub fn whole(k: usize) -> Self {
        Self {
            ids: vec!["all".into()],
            sets: vec![(0..k).collect()],
        }
    }

    /// `bx × by` rectangular blocks of a regular grid, row-major, ids `b{ix}_{iy}`.
    pub fn blocks(grid: &GridSpec, bx: usize, by: usize) -> Result<Self> {
        let (nx, ny) = match grid.kind {
            GridKind::Regular { nx, ny } => (nx, ny),
            GridKind::Membership => {
                return Err(Error::InvalidArgument("block partitions need a regular grid".into()));
            }
        };
        if bx == 0 || by == 0 || bx > nx || by > ny {
            return Err(Error::InvalidArgument(format!("{bx}x{by} blocks on a {nx}x{ny} grid")));
        }
        let mut ids = Vec::with_capacity(bx * by);
        let mut sets = vec![Vec::new(); bx * by];
        for iy in 0..by {
            for ix in 0..bx {
                ids.push(format!("b{ix}_{iy}"));
            }
        }
        for k in 0..nx * ny {
            let (cx, cy) = (k % nx, k / nx);
            sets[(cy * by / ny) * bx + cx * bx / nx].push(k);
        }
        Ok(Self { ids, sets })
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if self.ids.len() != self.sets.len() {
            return Err(Error::Dimension(format!(
                "{} partition ids for {} sets",
                self.ids.len(),
                self.sets.len()
            )));
        }
        let mut seen = vec![false; k];
        for (id, set) in self.ids.iter().zip(&self.sets) {
            for &c in set {
                if c >= k {
                    return Err(Error::InvalidArgument(format!("partition `{id}` names cell {c} of {k}")));
                }
                if seen[c] {
                    return Err(Error::InvalidArgument(format!("cell {c} appears twice in the partition")));
                }
                seen[c] = true;
            }
        }
        if let Some(c) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidArgument(format!("cell {c} is not covered by the partition")));
        }
        Ok(())
    }
}

fn check_origin(origin: &[usize], k: usize) -> Result<()> {
    if origin.is_empty() {
        return Err(Error::InvalidArgument("origin set is empty".into()));
    }
    if let Some(c) = origin.iter().find(|&&c| c >= k) {
        return Err(Error::InvalidArgument(format!("origin cell {c} of {k}")));
    }
    Ok(())
}

/// `λ(B_d, B_o) / λ(D, B_o)` for each `B_d` of the partition.
pub fn flow_from_intensity(log_lambda: &[f64], areas: &[f64], origin: &[usize], partition: &Partition) -> Result<Vec<f64>> {
    let k = areas.len();
    check_origin(origin, k)?;
    partition.validate(k)?;
    let mut row = vec![0.0; k];
    for &kt in origin {
        for (kr, r) in row.iter_mut().enumerate() {
            *r += log_lambda[kt * k + kr].exp() * areas[kr] * areas[kt];
        }
    }
    let mass: Vec<f64> = partition.sets.iter().map(|s| s.iter().map(|&c| row[c]).sum()).collect();
    let total: f64 = mass.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::Undefined(format!("intensity mass from the origin set is {total}")));
    }
    Ok(mass.into_iter().map(|v| v / total).collect())
}

/// `N(B_d, B_o) / N(D, B_o)` from observed pair counts.
pub fn flow_from_counts(counts: &PairCountsMatrix, origin: &[usize], partition: &Partition) -> Result<Vec<f64>> {
    let k = counts.dim();
    check_origin(origin, k)?;
    partition.validate(k)?;
    let mass: Vec<f64> = partition
        .sets
        .iter()
        .map(|s| {
            s.iter()
                .map(|&kr| origin.iter().map(|&kt| counts.get(kr, kt) as f64).sum::<f64>())
                .sum()
        })
        .collect();
    let total: f64 = mass.iter().sum();
    if total == 0.0 {
        return Err(Error::Undefined("no pairs start in the origin set".into()));
    }
    Ok(mass.into_iter().map(|v| v / total).collect())
}

/// Posterior summary of the flow into one subregion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSummary {
    pub partition_id: String,
    pub post_mean: f64,
    pub post_lo95: f64,
    pub post_hi95: f64,
    pub heldout_count_prop: Option<f64>,
}

/// Per-draw flow proportions (`draws × sets`).
pub fn flow_draws(
    model: &JointModel,
    chain: &PosteriorChain,
    origin: &[usize],
    partition: &Partition,
) -> Result<Vec<Vec<f64>>> {
    (0..chain.len())
        .into_par_iter()
        .map(|i| {
            let p = model.params_from_draw(chain, i)?;
            flow_from_intensity(&model.log_intensity(&p)?, &model.areas, origin, partition)
        })
        .collect()
}

/// Posterior flow proportions, with the count-based proportions of `heldout` if given.
pub fn flow_proportions(
    model: &JointModel,
    chain: &PosteriorChain,
    origin: &[usize],
    partition: &Partition,
    heldout: Option<&PairCountsMatrix>,
) -> Result<Vec<FlowSummary>> {
    let draws = flow_draws(model, chain, origin, partition)?;
    if draws.is_empty() {
        return Err(Error::Data("chain has no draws".into()));
    }
    // an empty held-out origin set leaves the count column blank rather than failing
    let counts = match heldout.map(|h| flow_from_counts(h, origin, partition)) {
        Some(Ok(v)) => Some(v),
        Some(Err(Error::Undefined(_))) | None => None,
        Some(Err(e)) => return Err(e),
    };
    Ok(partition
        .ids
        .iter()
        .enumerate()
        .map(|(j, id)| {
            let mut v: Vec<f64> = draws.iter().map(|d| d[j]).collect();
            v.sort_by(f64::total_cmp);
            FlowSummary {
                partition_id: id.clone(),
                post_mean: diagnostics::mean(&v),
                post_lo95: diagnostics::quantile_sorted(&v, 0.025),
                post_hi95: diagnostics::quantile_sorted(&v, 0.975),
                heldout_count_prop: counts.as_ref().map(|c| c[j]),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::BBox;
    use crate::ppm::loglik_gridded;
    use approx::assert_abs_diff_eq;

    fn grid(n: usize) -> GridSpec {
        GridSpec::regular(BBox::new(0.0, 1.0, 0.0, 1.0).unwrap(), n, n).unwrap()
    }

    #[test]
    fn pair_counts_single_and_total() {
        let g = grid(2);
        let p = PairedPattern::complete(vec![Point::new(0.7, 0.7)], vec![Point::new(0.8, 0.9)]).unwrap();
        let m = pair_counts(&p, &g).unwrap();
        assert_eq!(m.get(3, 3), 1);
        assert_eq!(m.total(), 1);
        let outside = PairedPattern::complete(vec![Point::new(0.5, 0.5)], vec![Point::new(1.5, 0.5)]).unwrap();
        assert!(matches!(pair_counts(&outside, &g), Err(Error::Assignment { .. })));
    }

    #[test]
    fn separable_closed_form() {
        let g = grid(3);
        let spec = JointModelSpec::new(JointVariant::Ind);
        let mut c = PairCountsMatrix::zeros(9);
        c.add(1, 4, 7);
        c.add(8, 0, 5);
        let b0 = 0.8;
        let l = joint_loglik(&JointParams::constant(b0, 9), &c, &g, None, &spec).unwrap();
        assert_abs_diff_eq!(l, -b0.exp() + 12.0 * b0, epsilon = 1e-12);
    }

    #[test]
    fn factorizes_into_two_pattern_likelihoods_at_eta_zero() {
        let g = grid(3);
        let spec = JointModelSpec::new(JointVariant::Ind);
        let areas = g.std_areas();
        let z_r: Vec<f64> = (0..9).map(|i| (i as f64 * 0.7).sin()).collect();
        let z_t: Vec<f64> = (0..9).map(|i| (i as f64 * 1.3).cos()).collect();
        let mut c = PairCountsMatrix::zeros(9);
        for (r, t, n) in [(0, 3, 2), (5, 5, 4), (8, 1, 1), (2, 7, 3)] {
            c.add(r, t, n);
        }
        let p = JointParams {
            beta0: 0.4,
            z_r: z_r.clone(),
            z_t: z_t.clone(),
            ..JointParams::constant(0.0, 9)
        };
        let joint = joint_loglik(&p, &c, &g, None, &spec).unwrap();
        // oracle: two one-pattern likelihoods, with the product integral replacing the sum
        let ones = DMatrix::from_element(9, 1, 1.0);
        let nr: Vec<f64> = c.recovery_totals().iter().map(|&n| n as f64).collect();
        let nt: Vec<f64> = c.theft_totals().iter().map(|&n| n as f64).collect();
        let lr = loglik_gridded(&[0.4], Some(&z_r), &nr, &areas, &ones).unwrap();
        let lt = loglik_gridded(&[0.0], Some(&z_t), &nt, &areas, &ones).unwrap();
        let ir: f64 = (0..9).map(|k| areas[k] * (0.4 + z_r[k]).exp()).sum();
        let it: f64 = (0..9).map(|k| areas[k] * z_t[k].exp()).sum();
        assert_abs_diff_eq!(joint, lr + lt + ir + it - ir * it, epsilon = 1e-10);
    }

    #[test]
    fn two_cell_enumeration() {
        let g = GridSpec::regular(BBox::new(0.0, 2.0, 0.0, 1.0).unwrap(), 2, 1).unwrap();
        let mut spec = JointModelSpec::new(JointVariant::Dep);
        spec.kernel_sigma = 0.8;
        let psi = (vec![0.3, -0.2], vec![0.1, 0.6]);
        let p = JointParams {
            beta0: 0.2,
            eta: -0.4,
            z_r: vec![0.1, -0.3],
            z_t: vec![0.5, 0.05],
            psi: Some(psi.clone()),
            ..JointParams::constant(0.0, 2)
        };
        let mut c = PairCountsMatrix::zeros(2);
        c.add(0, 0, 3);
        c.add(1, 0, 1);
        c.add(0, 1, 2);
        let got = joint_loglik(&p, &c, &g, None, &spec).unwrap();
        let reps = [Point::new(0.5, 0.5), Point::new(1.5, 0.5)];
        let mut want = 0.0;
        for kr in 0..2 {
            for kt in 0..2 {
                let s = sigma_from_psi(psi.0[kt], psi.1[kt], 0.8, 3.5);
                let d = (reps[kr].x - reps[kt].x, reps[kr].y - reps[kt].y);
                let l = 0.2 + p.z_r[kr] + p.z_t[kt] - 0.4 * s.inv_quad(d);
                want += -l.exp() * 0.25 + c.get(kr, kt) as f64 * l;
            }
        }
        assert_abs_diff_eq!(got, want, epsilon = 1e-12);
    }

    #[test]
    fn intensity_rank_one_at_eta_zero() {
        let g = grid(3);
        let model = JointModel::new(&g, None, &JointModelSpec::new(JointVariant::Ind)).unwrap();
        let p = JointParams {
            z_r: (0..9).map(|i| i as f64 * 0.1).collect(),
            z_t: (0..9).map(|i| 1.0 - i as f64 * 0.2).collect(),
            ..JointParams::constant(0.3, 9)
        };
        let l = model.log_intensity(&p).unwrap();
        let m = DMatrix::from_iterator(9, 9, l.iter().map(|v| v.exp()));
        let sv = m.singular_values();
        assert!(sv[1] / sv[0] < 1e-10, "{sv}");
    }

    #[test]
    fn off_diagonal_mass_decreases_with_eta() {
        let g = grid(3);
        let model = JointModel::new(&g, None, &JointModelSpec::new(JointVariant::Dep)).unwrap();
        let mut last = f64::INFINITY;
        for eta in [0.0, -1.0, -5.0, -20.0, -80.0, -1000.0] {
            let p = JointParams {
                eta,
                psi: Some((vec![0.2; 9], vec![-0.4; 9])),
                ..JointParams::constant(0.0, 9)
            };
            let l = model.log_intensity(&p).unwrap();
            let off: f64 = (0..81).filter(|i| i % 9 != i / 9).map(|i| l[i].exp()).sum();
            assert!(off < last);
            last = off;
        }
        assert!(last < 1e-10);
    }

    #[test]
    fn flow_constant_intensity() {
        let g = grid(2);
        let model = JointModel::new(&g, None, &JointModelSpec::new(JointVariant::Ind)).unwrap();
        let l = model.log_intensity(&JointParams::constant(1.0, 4)).unwrap();
        let part = Partition {
            ids: (0..4).map(|i| i.to_string()).collect(),
            sets: (0..4).map(|i| vec![i]).collect(),
        };
        let f = flow_from_intensity(&l, &model.areas, &[0, 2], &part).unwrap();
        for v in f {
            assert_abs_diff_eq!(v, 0.25, epsilon = 1e-12);
        }
        let whole = flow_from_intensity(&l, &model.areas, &[1], &Partition::whole(4)).unwrap();
        assert_eq!(whole, vec![1.0]);
        assert!(flow_from_counts(&PairCountsMatrix::zeros(4), &[1], &part).is_err());
        assert!(flow_from_intensity(&l, &model.areas, &[], &part).is_err());
    }

    #[test]
    fn joint_chain_runs_and_records_fields() {
        let g = grid(3);
        let mut thefts = vec![];
        let mut recs = vec![];
        for i in 0..60 {
            let t = Point::new((i % 7) as f64 / 7.0 + 0.05, (i % 5) as f64 / 5.0 + 0.1);
            thefts.push(t);
            recs.push(Point::new((t.x + 0.02).min(0.99), t.y));
        }
        let pairs = PairedPattern::complete(thefts, recs).unwrap();
        let spec = JointModelSpec::new(JointVariant::Dep);
        let chain = fit_joint(&pairs, &g, None, &spec, &ChainConfig::new(20, 10, 3)).unwrap();
        assert_eq!(chain.latent_names, vec!["z_R", "z_T", "psi_x", "psi_y"]);
        let model = JointModel::new(&g, None, &spec).unwrap();
        let part = Partition::whole(9);
        let f = flow_proportions(&model, &chain, &[4], &part, None).unwrap();
        assert_abs_diff_eq!(f[0].post_mean, 1.0, epsilon = 1e-12);
        // recorded loglik equals a direct evaluation at the draw
        let counts = pair_counts(&pairs, &g).unwrap();
        let p = model.params_from_draw(&chain, 9).unwrap();
        let ll = chain.log_lik()[9];
        assert_abs_diff_eq!(model.loglik(&p, &counts).unwrap(), ll, epsilon = 1e-9 * ll.abs().max(1.0));
    }
}
