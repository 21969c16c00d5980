use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::arwmh::{arwmh_step, AdaptiveRwState};
use super::diagnostics::{summarize, ParamSummary};
use super::ess::ess_step;
use super::prior::ParamPrior;
use crate::error::{Error, Result};
use crate::gp::CholFactor;
use crate::rng::{stream_rng, OdRng, STREAM_CHAIN};

/// Name under which every chain records the data log-likelihood of a draw.
pub const LOGLIK: &str = "loglik";

/// One update block of a posterior program.
#[derive(Debug, Clone, PartialEq)]
pub enum Block {
    /// Adaptive random-walk MH over scalar parameters, on the scales implied
    /// by their priors (log for positive, logit for bounded).
    RandomWalk { name: String, params: Vec<usize> },
    /// Elliptical slice update of a latent Gaussian field.
    Elliptical { latent: usize },
    /// Exact conditional draw supplied by [`PosteriorProgram::gibbs_update`].
    Gibbs { name: String },
}

/// Current values of all scalars and latent fields.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct State {
    pub scalars: Vec<f64>,
    pub latents: Vec<Vec<f64>>,
}

/// A posterior the chain driver can sample.
///
/// Priors on scalars are declared through [`PosteriorProgram::scalar_priors`]
/// and added by the driver together with transformation Jacobians; the
/// program supplies only likelihood terms and latent-field prior densities.
pub trait PosteriorProgram {
    fn scalar_names(&self) -> Vec<String>;
    fn scalar_priors(&self) -> Vec<ParamPrior>;
    fn latent_names(&self) -> Vec<String>;
    fn blocks(&self) -> Vec<Block>;
    fn initial_state(&self) -> State;

    /// Log of every posterior factor that depends on the scalars of random-walk
    /// block `block`, excluding their declared priors. Constants may be dropped.
    fn block_log_density(&mut self, scalars: &[f64], latents: &[Vec<f64>], block: usize) -> Result<f64>;

    /// Prior factor of latent field `latent` at the current hyperparameters.
    fn latent_prior(&mut self, scalars: &[f64], latent: usize) -> Result<Arc<CholFactor>>;

    /// Hook run before an elliptical update of `latent` (e.g. to cache the
    /// parts of the likelihood that do not involve it).
    fn prepare_latent(&mut self, _scalars: &[f64], _latents: &[Vec<f64>], _latent: usize) -> Result<()> {
        Ok(())
    }

    /// Log-likelihood as a function of latent field `latent` alone, the rest of
    /// the state fixed at the values passed to `prepare_latent`. Only
    /// differences matter.
    fn latent_log_lik(&self, scalars: &[f64], latents: &[Vec<f64>], latent: usize, value: &[f64]) -> f64;

    /// Exact conditional update for [`Block::Gibbs`] block `block`; it must
    /// leave the posterior invariant.
    fn gibbs_update(&mut self, _state: &mut State, block: usize, _rng: &mut OdRng) -> Result<()> {
        Err(Error::Kernel(format!("block {block} has no Gibbs update")))
    }

    /// Data log-likelihood recorded with every kept draw.
    fn data_log_lik(&mut self, state: &State) -> Result<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub burn_in: usize,
    pub keep: usize,
    pub seed: u64,
    #[serde(default)]
    pub stream: u64,
    #[serde(default = "default_true")]
    pub record_latents: bool,
}

fn default_true() -> bool {
    true
}

impl ChainConfig {
    pub fn new(burn_in: usize, keep: usize, seed: u64) -> Self {
        Self {
            burn_in,
            keep,
            seed,
            stream: STREAM_CHAIN,
            record_latents: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    pub params: Vec<f64>,
    pub latents: Vec<Vec<f64>>,
}

/// Kept draws with metadata. The last parameter is always [`LOGLIK`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorChain {
    pub param_names: Vec<String>,
    pub latent_names: Vec<String>,
    pub draws: Vec<Draw>,
    pub burn_in: usize,
    pub seed: u64,
    /// acceptance rate per random-walk block (whole run)
    pub acceptance: Vec<(String, f64)>,
    /// mean likelihood evaluations per elliptical update, per latent field
    pub ess_evaluations: Vec<(String, f64)>,
}

impl PosteriorChain {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.param_names.iter().position(|n| n == name)
    }

    pub fn latent_index(&self, name: &str) -> Option<usize> {
        self.latent_names.iter().position(|n| n == name)
    }

    /// Trace of a named scalar parameter.
    pub fn param(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.param_index(name)?;
        Some(self.draws.iter().map(|d| d.params[i]).collect())
    }

    pub fn log_lik(&self) -> Vec<f64> {
        self.param(LOGLIK).unwrap_or_default()
    }

    pub fn summaries(&self) -> Vec<ParamSummary> {
        self.param_names
            .iter()
            .map(|n| summarize(n, &self.param(n).expect("known name")))
            .collect()
    }

    pub fn summary(&self, name: &str) -> Option<ParamSummary> {
        self.param(name).map(|t| summarize(name, &t))
    }
}

/// Run `burn_in + keep` sweeps over the program's blocks in declared order.
pub fn run_chain<P: PosteriorProgram + ?Sized>(program: &mut P, config: &ChainConfig) -> Result<PosteriorChain> {
    let mut rng = stream_rng(config.seed, config.stream);
    let scalar_names = program.scalar_names();
    let priors = program.scalar_priors();
    let latent_names = program.latent_names();
    let blocks = program.blocks();
    let mut state = program.initial_state();
    if priors.len() != scalar_names.len() || state.scalars.len() != scalar_names.len() {
        return Err(Error::Dimension("scalar names, priors and initial state disagree".into()));
    }
    if state.latents.len() != latent_names.len() {
        return Err(Error::Dimension("latent names and initial state disagree".into()));
    }

    let mut rw_states: Vec<Option<AdaptiveRwState>> = blocks
        .iter()
        .map(|b| match b {
            Block::RandomWalk { params, .. } => Some(AdaptiveRwState::for_dim(params.len())),
            Block::Elliptical { .. } | Block::Gibbs { .. } => None,
        })
        .collect();
    let mut ess_evals = vec![(0usize, 0usize); latent_names.len()];

    let mut param_names = scalar_names.clone();
    param_names.push(LOGLIK.to_string());
    let mut draws = Vec::with_capacity(config.keep);
    let total = config.burn_in + config.keep;

    for iteration in 0..total {
        let wrap = |e: Error| Error::Chain {
            iteration,
            source: Box::new(e),
        };
        for (b, block) in blocks.iter().enumerate() {
            match block {
                Block::RandomWalk { params, .. } => {
                    let transforms: Vec<_> = params.iter().map(|&i| priors[i].transform()).collect();
                    let current: Vec<f64> = params
                        .iter()
                        .zip(&transforms)
                        .map(|(&i, t)| t.to_unconstrained(state.scalars[i]))
                        .collect();
                    let mut scratch = state.scalars.clone();
                    let latents = &state.latents;
                    let rw = rw_states[b].as_mut().expect("random-walk block state");
                    let outcome = arwmh_step(
                        &current,
                        |u: &[f64]| {
                            let mut lp = 0.0;
                            for ((&i, t), &ui) in params.iter().zip(&transforms).zip(u) {
                                let x = t.to_constrained(ui);
                                scratch[i] = x;
                                lp += priors[i].log_density(x) + t.log_jacobian(ui);
                            }
                            if !lp.is_finite() {
                                return Ok(if lp.is_nan() { f64::NAN } else { f64::NEG_INFINITY });
                            }
                            Ok(lp + program.block_log_density(&scratch, latents, b)?)
                        },
                        rw,
                        &mut rng,
                    )
                    .map_err(wrap)?;
                    for ((&i, t), &u) in params.iter().zip(&transforms).zip(&outcome.next) {
                        state.scalars[i] = t.to_constrained(u);
                    }
                }
                Block::Elliptical { latent } => {
                    let latent = *latent;
                    let prior = program.latent_prior(&state.scalars, latent).map_err(wrap)?;
                    program
                        .prepare_latent(&state.scalars, &state.latents, latent)
                        .map_err(wrap)?;
                    let current = state.latents[latent].clone();
                    let ll0 = program.latent_log_lik(&state.scalars, &state.latents, latent, &current);
                    if !ll0.is_finite() {
                        return Err(wrap(Error::Kernel(format!(
                            "log-likelihood of latent `{}` is {ll0} at the current state",
                            latent_names[latent]
                        ))));
                    }
                    let scalars = &state.scalars;
                    let latents = &state.latents;
                    let prog = &*program;
                    let outcome = ess_step(
                        &current,
                        ll0,
                        &prior,
                        |v| prog.latent_log_lik(scalars, latents, latent, v),
                        &mut rng,
                    );
                    ess_evals[latent].0 += outcome.evaluations;
                    ess_evals[latent].1 += 1;
                    state.latents[latent] = outcome.next;
                }
                Block::Gibbs { .. } => program.gibbs_update(&mut state, b, &mut rng).map_err(wrap)?,
            }
        }
        if iteration >= config.burn_in {
            let mut params = state.scalars.clone();
            params.push(program.data_log_lik(&state).map_err(wrap)?);
            draws.push(Draw {
                params,
                latents: if config.record_latents {
                    state.latents.clone()
                } else {
                    Vec::new()
                },
            });
        }
    }

    let acceptance = blocks
        .iter()
        .zip(&rw_states)
        .filter_map(|(b, s)| match (b, s) {
            (Block::RandomWalk { name, .. }, Some(s)) => Some((name.clone(), s.acceptance_rate())),
            _ => None,
        })
        .collect();
    let ess_evaluations = latent_names
        .iter()
        .zip(&ess_evals)
        .filter(|(_, (_, n))| *n > 0)
        .map(|(name, (e, n))| (name.clone(), *e as f64 / *n as f64))
        .collect();

    Ok(PosteriorChain {
        param_names,
        latent_names,
        draws,
        burn_in: config.burn_in,
        seed: config.seed,
        acceptance,
        ess_evaluations,
    })
}

/// Least-recently-used cache of two prior factors keyed by hyperparameters.
///
/// An MH update of GP hyperparameters needs the factor at the current and the
/// proposed values; whichever is kept is the one the next ESS update uses.
#[derive(Debug, Default, Clone)]
pub struct FactorCache {
    slots: [Option<(Vec<u64>, Arc<CholFactor>)>; 2],
    newest: usize,
}

impl FactorCache {
    pub fn get_or_try_insert<F>(&mut self, key: &[f64], build: F) -> Result<Arc<CholFactor>>
    where
        F: FnOnce() -> Result<CholFactor>,
    {
        let bits: Vec<u64> = key.iter().map(|v| v.to_bits()).collect();
        for (i, slot) in self.slots.iter().enumerate() {
            if let Some((k, f)) = slot {
                if *k == bits {
                    let f = Arc::clone(f);
                    self.newest = i;
                    return Ok(f);
                }
            }
        }
        let f = Arc::new(build()?);
        let victim = 1 - self.newest;
        self.slots[victim] = Some((bits, Arc::clone(&f)));
        self.newest = victim;
        Ok(f)
    }
}
