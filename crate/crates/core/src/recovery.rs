//! Recovery location given theft location.
//!
//! The conditional density is a bivariate Gaussian kernel centred at the theft
//! location,
//!
//! ```text
//! f(s_R | s_T) = 1 / (π √det Σ) · exp(−dᵀ Σ⁻¹ d),   d = s_R − s_T,
//! ```
//!
//! so the displacement `d` is distributed `N(0, Σ/2)`. `Σ` is either one
//! constant matrix or a field `Σ(s_T)` built from two latent Gaussian processes
//! `ψx, ψy` (a Higdon-style kernel whose determinant does not depend on `ψ`).

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{chol_with_scale, cov_matrix, CholFactor, CovarianceModel, Kriging};
use crate::grid::{GridSpec, PairedPattern, Point};
use crate::mcmc::{run_chain, Block, ChainConfig, ParamPrior, PosteriorChain, PosteriorProgram, Prior, State};

/// Fixed scale constant of the spatially varying kernel.
pub const HIGDON_A: f64 = 3.5;

/// Symmetric 2×2 matrix `[[xx, xy], [xy, yy]]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sym2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl Sym2 {
    pub fn new(xx: f64, xy: f64, yy: f64) -> Self {
        Self { xx, xy, yy }
    }

    pub fn identity() -> Self {
        Self::new(1.0, 0.0, 1.0)
    }

    pub fn det(&self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }

    pub fn is_positive_definite(&self) -> bool {
        self.xx > 0.0 && self.det() > 0.0 && self.xx.is_finite() && self.yy.is_finite() && self.xy.is_finite()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self::new(self.xx * c, self.xy * c, self.yy * c)
    }

    /// `dᵀ M⁻¹ d`
    pub fn inv_quad(&self, d: (f64, f64)) -> f64 {
        (self.yy * d.0 * d.0 - 2.0 * self.xy * d.0 * d.1 + self.xx * d.1 * d.1) / self.det()
    }

    /// `tr(M⁻¹ S)` for symmetric `S`.
    pub fn inv_trace(&self, s: &Sym2) -> f64 {
        (self.yy * s.xx - 2.0 * self.xy * s.xy + self.xx * s.yy) / self.det()
    }

    /// Lower Cholesky factor `(l11, l21, l22)`.
    pub fn cholesky(&self) -> Result<(f64, f64, f64)> {
        if !self.is_positive_definite() {
            return Err(Error::Kernel(format!("kernel matrix {self:?} is not positive definite")));
        }
        let l11 = self.xx.sqrt();
        let l21 = self.xy / l11;
        let l22 = (self.yy - l21 * l21).sqrt();
        Ok((l11, l21, l22))
    }

    /// Eigenvalues `(larger, smaller)` and the angle of the larger one's eigenvector.
    pub fn eigen(&self) -> (f64, f64, f64) {
        let mean = 0.5 * (self.xx + self.yy);
        let half = 0.5 * (self.xx - self.yy);
        let r = half.hypot(self.xy);
        let angle = 0.5 * (2.0 * self.xy).atan2(self.xx - self.yy);
        (mean + r, mean - r, angle)
    }
}

/// Constant kernel `Σ = [[σ1², ρσ1σ2], [ρσ1σ2, σ2²]]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConstant {
    pub sigma1: f64,
    pub sigma2: f64,
    pub rho: f64,
}

impl KernelConstant {
    pub fn new(sigma1: f64, sigma2: f64, rho: f64) -> Result<Self> {
        if !(sigma1 > 0.0 && sigma2 > 0.0 && sigma1.is_finite() && sigma2.is_finite()) {
            return Err(Error::InvalidArgument(format!("kernel scales must be positive (got {sigma1}, {sigma2})")));
        }
        if !(rho > -1.0 && rho < 1.0) {
            return Err(Error::InvalidArgument(format!("kernel correlation must lie in (-1, 1) (got {rho})")));
        }
        Ok(Self { sigma1, sigma2, rho })
    }

    pub fn sigma(&self) -> Sym2 {
        Sym2::new(
            self.sigma1 * self.sigma1,
            self.rho * self.sigma1 * self.sigma2,
            self.sigma2 * self.sigma2,
        )
    }
}

/// `Σ = MᵀM` with `M = σ·diag(a, b)·R(α)`, `α = atan2(ψy, ψx)`.
///
/// `R(α)` has rows `(cos α, sin α)` and `(−sin α, cos α)`, so the major axis of
/// `Σ` points along `α` and rotating `ψ` rotates the kernel with it.
pub fn sigma_from_psi(psi_x: f64, psi_y: f64, sigma: f64, a: f64) -> Sym2 {
    let r2 = psi_x * psi_x + psi_y * psi_y;
    let x = (4.0 * a * a + r2 * r2 * PI * PI).sqrt() / (2.0 * PI);
    let major = x + 0.5 * r2;
    // (X + Y)(X − Y) = A²/π²; dividing avoids cancellation for large ‖ψ‖
    let minor = (a * a / (PI * PI)) / major;
    let alpha = if r2 == 0.0 { 0.0 } else { psi_y.atan2(psi_x) };
    let (s, c) = alpha.sin_cos();
    let s2 = sigma * sigma;
    Sym2::new(
        s2 * (major * c * c + minor * s * s),
        s2 * (major - minor) * c * s,
        s2 * (major * s * s + minor * c * c),
    )
}

/// Log conditional density of `s_r` given `s_t`.
pub fn cond_logdensity(s_r: &Point, s_t: &Point, sigma: &Sym2) -> Result<f64> {
    if !sigma.is_positive_definite() {
        return Err(Error::Kernel(format!("kernel matrix {sigma:?} is singular or indefinite")));
    }
    let d = (s_r.x - s_t.x, s_r.y - s_t.y);
    Ok(-PI.ln() - 0.5 * sigma.det().ln() - sigma.inv_quad(d))
}

/// Sum of `cond_logdensity` over `n` displacements with scatter `S = Σ d dᵀ`.
fn grouped_loglik(n: f64, scatter: &Sym2, sigma: &Sym2) -> f64 {
    let det = sigma.det();
    if !(det > 0.0) || !(sigma.xx > 0.0) {
        return f64::NEG_INFINITY;
    }
    -n * PI.ln() - 0.5 * n * det.ln() - sigma.inv_trace(scatter)
}

fn scatter(pairs: &[(Point, Point)]) -> Sym2 {
    let mut s = Sym2::new(0.0, 0.0, 0.0);
    for (t, r) in pairs {
        let (dx, dy) = (r.x - t.x, r.y - t.y);
        s.xx += dx * dx;
        s.xy += dx * dy;
        s.yy += dy * dy;
    }
    s
}

/// Priors of the conditional kernels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelPriors {
    /// Prior on each squared scale (`σ1², σ2²`, or `σ²` of the spatial kernel).
    pub scale_sq: Prior,
    pub rho: Prior,
}

impl Default for KernelPriors {
    fn default() -> Self {
        Self {
            scale_sq: Prior::InverseGamma { shape: 2.0, scale: 0.1 },
            rho: Prior::Uniform { lo: -1.0, hi: 1.0 },
        }
    }
}

impl KernelPriors {
    pub fn validate(&self) -> Result<()> {
        self.scale_sq.validate()?;
        self.rho.validate()?;
        if let Prior::Uniform { lo, hi } = self.rho {
            if lo < -1.0 || hi > 1.0 {
                return Err(Error::InvalidArgument(format!(
                    "correlation prior support ({lo}, {hi}) exceeds (-1, 1)"
                )));
            }
        } else {
            return Err(Error::InvalidArgument("correlation prior must be uniform".into()));
        }
        Ok(())
    }
}

fn complete_pairs_min(pairs: &PairedPattern, min: usize) -> Result<Vec<(Point, Point)>> {
    let complete = pairs.complete_pairs();
    if complete.len() < min {
        return Err(Error::Data(format!(
            "conditional fit needs at least {min} complete pairs (got {})",
            complete.len()
        )));
    }
    Ok(complete)
}

struct ConstantProgram {
    n: f64,
    scatter: Sym2,
    priors: KernelPriors,
    init: Vec<f64>,
}

impl ConstantProgram {
    fn loglik(&self, s: &[f64]) -> f64 {
        match KernelConstant::new(s[0], s[1], s[2]) {
            Ok(k) => grouped_loglik(self.n, &self.scatter, &k.sigma()),
            Err(_) => f64::NEG_INFINITY,
        }
    }
}

impl PosteriorProgram for ConstantProgram {
    fn scalar_names(&self) -> Vec<String> {
        vec!["sigma1".into(), "sigma2".into(), "rho".into()]
    }

    fn scalar_priors(&self) -> Vec<ParamPrior> {
        vec![
            ParamPrior::on_square(self.priors.scale_sq),
            ParamPrior::on_square(self.priors.scale_sq),
            ParamPrior::new(self.priors.rho),
        ]
    }

    fn latent_names(&self) -> Vec<String> {
        vec![]
    }

    fn blocks(&self) -> Vec<Block> {
        ["sigma1", "sigma2", "rho"]
            .iter()
            .enumerate()
            .map(|(i, n)| Block::RandomWalk {
                name: (*n).into(),
                params: vec![i],
            })
            .collect()
    }

    fn initial_state(&self) -> State {
        State {
            scalars: self.init.clone(),
            latents: vec![],
        }
    }

    fn block_log_density(&mut self, scalars: &[f64], _: &[Vec<f64>], _: usize) -> Result<f64> {
        Ok(self.loglik(scalars))
    }

    fn latent_prior(&mut self, _: &[f64], _: usize) -> Result<Arc<CholFactor>> {
        Err(Error::Kernel("constant kernel has no latent fields".into()))
    }

    fn latent_log_lik(&self, _: &[f64], _: &[Vec<f64>], _: usize, _: &[f64]) -> f64 {
        f64::NEG_INFINITY
    }

    fn data_log_lik(&mut self, state: &State) -> Result<f64> {
        Ok(self.loglik(&state.scalars))
    }
}

/// Moment estimate `Σ̂ = 2 S / n` turned into a valid starting kernel.
fn moment_start(n: f64, s: &Sym2) -> KernelConstant {
    let floor = 1e-3;
    let s1 = (2.0 * s.xx / n).sqrt().max(floor);
    let s2 = (2.0 * s.yy / n).sqrt().max(floor);
    let rho = (2.0 * s.xy / n / (s1 * s2)).clamp(-0.9, 0.9);
    let rho = if rho.is_finite() { rho } else { 0.0 };
    KernelConstant {
        sigma1: s1,
        sigma2: s2,
        rho,
    }
}

/// Posterior of the constant kernel `(σ1, σ2, ρ)` from the complete pairs.
pub fn fit_conditional_constant(
    pairs: &PairedPattern,
    priors: &KernelPriors,
    config: &ChainConfig,
) -> Result<PosteriorChain> {
    priors.validate()?;
    let complete = complete_pairs_min(pairs, 3)?;
    let n = complete.len() as f64;
    let s = scatter(&complete);
    let k0 = moment_start(n, &s);
    let mut program = ConstantProgram {
        n,
        scatter: s,
        priors: *priors,
        init: vec![k0.sigma1, k0.sigma2, k0.rho],
    };
    run_chain(&mut program, config)
}

/// Where the latent `ψ` fields of the spatial kernel live.
#[derive(Debug, Clone, PartialEq)]
pub enum AnchorChoice {
    /// Distinct theft locations of the training pairs.
    TheftPoints,
    /// Representative points of a grid; each theft uses its nearest one.
    Grid(GridSpec),
    /// Grid anchoring when there are more than this many complete pairs,
    /// theft points otherwise.
    Auto { grid: GridSpec, threshold: usize },
}

/// Default pair count above which anchoring switches to the grid.
pub const GRID_ANCHOR_THRESHOLD: usize = 1000;

/// Anchor points of the `ψ` fields.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    pub points: Vec<Point>,
    /// Grid anchoring: test locations use the nearest anchor rather than kriging.
    pub grid_anchored: bool,
}

impl AnchorSet {
    pub fn build(pairs: &PairedPattern, choice: &AnchorChoice) -> Result<Self> {
        match choice {
            AnchorChoice::TheftPoints => {
                let mut points: Vec<Point> = Vec::new();
                let mut seen = std::collections::HashSet::new();
                for (t, _) in pairs.complete_pairs() {
                    if seen.insert((t.x.to_bits(), t.y.to_bits())) {
                        points.push(t);
                    }
                }
                if points.is_empty() {
                    return Err(Error::Data("no complete pairs to anchor the kernel field".into()));
                }
                Ok(Self {
                    points,
                    grid_anchored: false,
                })
            }
            AnchorChoice::Grid(grid) => Ok(Self {
                points: grid.representatives(),
                grid_anchored: true,
            }),
            AnchorChoice::Auto { grid, threshold } => {
                if pairs.complete_indices().len() > *threshold {
                    Self::build(pairs, &AnchorChoice::Grid(grid.clone()))
                } else {
                    Self::build(pairs, &AnchorChoice::TheftPoints)
                }
            }
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index of the anchor nearest to `p` (ties to the lowest index).
    pub fn nearest(&self, p: &Point) -> usize {
        let mut best = (0, f64::INFINITY);
        for (i, a) in self.points.iter().enumerate() {
            let d = a.dist2(p);
            if d < best.1 {
                best = (i, d);
            }
        }
        best.0
    }
}

/// Fixed parts of the spatially varying kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialKernelSpec {
    /// Decay of the squared-exponential prior of `ψx, ψy`.
    pub phi_star: f64,
    #[serde(default = "default_a")]
    pub a: f64,
}

fn default_a() -> f64 {
    HIGDON_A
}

impl SpatialKernelSpec {
    pub fn new(phi_star: f64) -> Self {
        Self { phi_star, a: HIGDON_A }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.phi_star > 0.0 && self.phi_star.is_finite()) {
            return Err(Error::InvalidArgument(format!("phi* must be positive (got {})", self.phi_star)));
        }
        if !(self.a > 0.0 && self.a.is_finite()) {
            return Err(Error::InvalidArgument(format!("A must be positive (got {})", self.a)));
        }
        Ok(())
    }

    pub fn psi_model(&self) -> Result<CovarianceModel> {
        CovarianceModel::squared_exponential(self.phi_star)
    }
}

/// Kernel field: `σ`, `A`, and `ψ` values at the anchors.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelFieldHigdon {
    pub sigma: f64,
    pub a: f64,
    pub phi_star: f64,
    pub anchors: Vec<Point>,
    pub psi_x: Vec<f64>,
    pub psi_y: Vec<f64>,
}

impl KernelFieldHigdon {
    pub fn sigma_at(&self, anchor: usize) -> Sym2 {
        sigma_from_psi(self.psi_x[anchor], self.psi_y[anchor], self.sigma, self.a)
    }
}

/// Prior factor of the `ψ` fields at the anchors, jitter scale 1 (unit variance).
pub fn psi_prior_factor(anchors: &[Point], spec: &SpatialKernelSpec) -> Result<CholFactor> {
    let c = cov_matrix(anchors, &spec.psi_model()?)?;
    chol_with_scale(&c, 1.0)
}

struct SpatialProgram {
    a: f64,
    /// pairs per anchor and their displacement scatter, for anchors that have any
    groups: Vec<(usize, f64, Sym2)>,
    n_anchor: usize,
    prior: Arc<CholFactor>,
    priors: KernelPriors,
    sigma0: f64,
}

impl SpatialProgram {
    fn loglik(&self, sigma: f64, psi_x: &[f64], psi_y: &[f64]) -> f64 {
        if !(sigma > 0.0) {
            return f64::NEG_INFINITY;
        }
        self.groups
            .iter()
            .map(|(i, n, s)| grouped_loglik(*n, s, &sigma_from_psi(psi_x[*i], psi_y[*i], sigma, self.a)))
            .sum()
    }
}

impl PosteriorProgram for SpatialProgram {
    fn scalar_names(&self) -> Vec<String> {
        vec!["sigma".into()]
    }

    fn scalar_priors(&self) -> Vec<ParamPrior> {
        vec![ParamPrior::on_square(self.priors.scale_sq)]
    }

    fn latent_names(&self) -> Vec<String> {
        vec!["psi_x".into(), "psi_y".into()]
    }

    fn blocks(&self) -> Vec<Block> {
        vec![
            Block::Elliptical { latent: 0 },
            Block::Elliptical { latent: 1 },
            Block::RandomWalk {
                name: "sigma".into(),
                params: vec![0],
            },
        ]
    }

    fn initial_state(&self) -> State {
        State {
            scalars: vec![self.sigma0],
            latents: vec![vec![0.0; self.n_anchor]; 2],
        }
    }

    fn block_log_density(&mut self, scalars: &[f64], latents: &[Vec<f64>], _: usize) -> Result<f64> {
        Ok(self.loglik(scalars[0], &latents[0], &latents[1]))
    }

    fn latent_prior(&mut self, _: &[f64], _: usize) -> Result<Arc<CholFactor>> {
        Ok(Arc::clone(&self.prior))
    }

    fn latent_log_lik(&self, scalars: &[f64], latents: &[Vec<f64>], latent: usize, value: &[f64]) -> f64 {
        if latent == 0 {
            self.loglik(scalars[0], value, &latents[1])
        } else {
            self.loglik(scalars[0], &latents[0], value)
        }
    }

    fn data_log_lik(&mut self, state: &State) -> Result<f64> {
        Ok(self.loglik(state.scalars[0], &state.latents[0], &state.latents[1]))
    }
}

/// Posterior of the spatially varying kernel `(σ, ψx, ψy)` with `ψ` at `anchors`.
pub fn fit_conditional_spatial(
    pairs: &PairedPattern,
    spec: &SpatialKernelSpec,
    priors: &KernelPriors,
    anchors: &AnchorSet,
    config: &ChainConfig,
) -> Result<PosteriorChain> {
    spec.validate()?;
    priors.validate()?;
    if anchors.is_empty() {
        return Err(Error::InvalidArgument("spatial kernel needs at least one anchor".into()));
    }
    let complete = complete_pairs_min(pairs, 3)?;
    let mut groups: Vec<(f64, Sym2)> = vec![(0.0, Sym2::new(0.0, 0.0, 0.0)); anchors.len()];
    for (t, r) in &complete {
        let g = &mut groups[anchors.nearest(t)];
        let (dx, dy) = (r.x - t.x, r.y - t.y);
        g.0 += 1.0;
        g.1.xx += dx * dx;
        g.1.xy += dx * dy;
        g.1.yy += dy * dy;
    }
    let groups: Vec<(usize, f64, Sym2)> = groups
        .into_iter()
        .enumerate()
        .filter(|(_, (n, _))| *n > 0.0)
        .map(|(i, (n, s))| (i, n, s))
        .collect();
    let total = scatter(&complete);
    // E|d|² = tr(Σ)/2 = σ²A/π at ψ = 0
    let n = complete.len() as f64;
    let sigma0 = ((total.xx + total.yy) / n * PI / spec.a).sqrt().max(1e-3);
    let mut program = SpatialProgram {
        a: spec.a,
        groups,
        n_anchor: anchors.len(),
        prior: Arc::new(psi_prior_factor(&anchors.points, spec)?),
        priors: *priors,
        sigma0,
    };
    run_chain(&mut program, config)
}

/// A fitted conditional model, enough to predict at new theft locations.
#[derive(Debug, Clone, PartialEq)]
pub enum RecoveryModel {
    Constant,
    Spatial { spec: SpatialKernelSpec, anchors: AnchorSet },
}

/// Posterior predictive of the recovery location for one test theft.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryPrediction {
    pub theft: Point,
    /// Kernel of each posterior draw.
    pub sigmas: Vec<Sym2>,
    /// One recovery draw per posterior draw.
    pub samples: Vec<Point>,
    /// `(ψx, ψy)` kriging means per draw; empty for the constant kernel.
    pub psi_means: Vec<(f64, f64)>,
}

impl RecoveryPrediction {
    /// Log of the posterior-averaged density at `s`.
    pub fn log_density(&self, s: &Point) -> f64 {
        if self.sigmas.is_empty() {
            return f64::NEG_INFINITY;
        }
        let terms: Vec<f64> = self
            .sigmas
            .iter()
            .map(|k| cond_logdensity(s, &self.theft, k).unwrap_or(f64::NEG_INFINITY))
            .collect();
        let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            return m;
        }
        m + (terms.iter().map(|t| (t - m).exp()).sum::<f64>() / terms.len() as f64).ln()
    }

    /// Density at each cell representative of `grid`.
    pub fn density_on(&self, grid: &GridSpec) -> Vec<f64> {
        grid.cells
            .iter()
            .map(|c| self.log_density(&c.representative).exp())
            .collect()
    }

    pub fn crps(&self, observed: &Point) -> f64 {
        bicrps(&self.samples, observed)
    }
}

fn draw_displacement<R: Rng + ?Sized>(theft: &Point, sigma: &Sym2, rng: &mut R) -> Result<Point> {
    let (l11, l21, l22) = sigma.scaled(0.5).cholesky()?;
    let e1: f64 = rng.sample(StandardNormal);
    let e2: f64 = rng.sample(StandardNormal);
    Ok(Point::new(theft.x + l11 * e1, theft.y + l21 * e1 + l22 * e2))
}

/// Posterior predictive recovery distributions at `tests`.
///
/// For the spatial kernel, each draw's `ψ` is kriged to the test locations and
/// a value drawn from its marginal conditional law; with grid anchoring the
/// nearest anchor's `ψ` is used instead.
pub fn predict_recovery<R: Rng + ?Sized>(
    chain: &PosteriorChain,
    model: &RecoveryModel,
    tests: &[Point],
    rng: &mut R,
) -> Result<Vec<RecoveryPrediction>> {
    let mut out: Vec<RecoveryPrediction> = tests
        .iter()
        .map(|t| RecoveryPrediction {
            theft: *t,
            sigmas: Vec::with_capacity(chain.len()),
            samples: Vec::with_capacity(chain.len()),
            psi_means: Vec::new(),
        })
        .collect();
    match model {
        RecoveryModel::Constant => {
            let find = |n: &str| chain.param_index(n).ok_or_else(|| Error::Data(format!("chain has no `{n}`")));
            let (i1, i2, ir) = (find("sigma1")?, find("sigma2")?, find("rho")?);
            for d in &chain.draws {
                let k = KernelConstant::new(d.params[i1], d.params[i2], d.params[ir])?.sigma();
                for p in out.iter_mut() {
                    p.samples.push(draw_displacement(&p.theft, &k, rng)?);
                    p.sigmas.push(k);
                }
            }
        }
        RecoveryModel::Spatial { spec, anchors } => {
            let is = chain
                .param_index("sigma")
                .ok_or_else(|| Error::Data("chain has no `sigma`".into()))?;
            let (lx, ly) = match (chain.latent_index("psi_x"), chain.latent_index("psi_y")) {
                (Some(x), Some(y)) => (x, y),
                _ => return Err(Error::Data("chain has no psi fields".into())),
            };
            if chain.draws.first().is_some_and(|d| d.latents.is_empty()) {
                return Err(Error::Data("chain was run without recording latent fields".into()));
            }
            let nearest: Vec<usize> = tests.iter().map(|t| anchors.nearest(t)).collect();
            let kriging = if anchors.grid_anchored || tests.is_empty() {
                None
            } else {
                Some(Kriging::new(&anchors.points, tests, &spec.psi_model()?)?)
            };
            for d in &chain.draws {
                let (px, py) = (&d.latents[lx], &d.latents[ly]);
                if px.len() != anchors.len() || py.len() != anchors.len() {
                    return Err(Error::Dimension(format!(
                        "psi fields have {} values for {} anchors",
                        px.len(),
                        anchors.len()
                    )));
                }
                let (mx, my, sd): (Vec<f64>, Vec<f64>, Vec<f64>) = match &kriging {
                    Some(k) => (k.mean(px), k.mean(py), k.variances().iter().map(|v| v.sqrt()).collect()),
                    None => (
                        nearest.iter().map(|&i| px[i]).collect(),
                        nearest.iter().map(|&i| py[i]).collect(),
                        vec![0.0; tests.len()],
                    ),
                };
                for (h, p) in out.iter_mut().enumerate() {
                    let ex: f64 = rng.sample(StandardNormal);
                    let ey: f64 = rng.sample(StandardNormal);
                    let k = sigma_from_psi(mx[h] + sd[h] * ex, my[h] + sd[h] * ey, d.params[is], spec.a);
                    p.samples.push(draw_displacement(&p.theft, &k, rng)?);
                    p.sigmas.push(k);
                    p.psi_means.push((mx[h], my[h]));
                }
            }
        }
    }
    Ok(out)
}

/// Monte Carlo energy score of `samples` against `observed` (0 for an empty sample).
pub fn bicrps(samples: &[Point], observed: &Point) -> f64 {
    let l = samples.len();
    if l == 0 {
        return 0.0;
    }
    let lf = l as f64;
    let first: f64 = samples.iter().map(|s| s.dist(observed)).sum::<f64>() / lf;
    let mut pair = 0.0;
    for i in 0..l {
        for j in (i + 1)..l {
            pair += samples[i].dist(&samples[j]);
        }
    }
    // each unordered pair appears twice in the double sum
    (first - pair / (lf * lf)).max(0.0)
}

/// How many complete pairs to hold out for prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum HoldoutRule {
    Count { count: usize },
    Fraction { fraction: f64 },
}

impl HoldoutRule {
    /// 80 pairs for small data, half of them above the grid-anchoring threshold.
    pub fn default_for(m: usize) -> Self {
        if m > GRID_ANCHOR_THRESHOLD {
            Self::Fraction { fraction: 0.5 }
        } else {
            Self::Count { count: 80.min(m / 2) }
        }
    }

    fn size(&self, m: usize) -> Result<usize> {
        match *self {
            Self::Count { count } if count < m => Ok(count),
            Self::Fraction { fraction } if fraction > 0.0 && fraction < 1.0 => {
                Ok(((fraction * m as f64).round() as usize).clamp(1, m.saturating_sub(1)))
            }
            _ => Err(Error::InvalidArgument(format!("holdout {self:?} is invalid for {m} complete pairs"))),
        }
    }
}

/// Random split of the complete pairs into `(train, test)`; unrecovered thefts are dropped.
pub fn holdout_pairs<R: Rng + ?Sized>(
    pairs: &PairedPattern,
    rule: HoldoutRule,
    rng: &mut R,
) -> Result<(PairedPattern, PairedPattern)> {
    let mut complete = pairs.complete_indices();
    let h = rule.size(complete.len())?;
    // partial Fisher–Yates: the first h positions become the test set
    for i in 0..h {
        let j = rng.random_range(i..complete.len());
        complete.swap(i, j);
    }
    let mut test = complete[..h].to_vec();
    let mut train = complete[h..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((pairs.select(&train), pairs.select(&test)))
}
