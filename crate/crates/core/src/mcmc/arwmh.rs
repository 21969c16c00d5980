use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Target acceptance for vector random-walk blocks.
pub const TARGET_ACCEPT_VECTOR: f64 = 0.234;
/// Target acceptance for scalar random-walk blocks.
pub const TARGET_ACCEPT_SCALAR: f64 = 0.44;
/// Robbins–Monro gain exponent: the step adapts by `t^{-0.6}`.
pub const ADAPT_EXPONENT: f64 = 0.6;

/// Robbins–Monro adaptation state of one random-walk block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveRwState {
    pub log_step: f64,
    pub target_accept: f64,
    pub iteration: u64,
    pub accept_count: u64,
    pub adapt: bool,
}

impl AdaptiveRwState {
    pub fn new(log_step: f64, target_accept: f64) -> Self {
        Self {
            log_step,
            target_accept,
            iteration: 0,
            accept_count: 0,
            adapt: true,
        }
    }

    /// Default target for a block of `dim` parameters.
    pub fn for_dim(dim: usize) -> Self {
        let target = if dim <= 1 { TARGET_ACCEPT_SCALAR } else { TARGET_ACCEPT_VECTOR };
        // 2.38/√d scaling as a starting point
        Self::new((2.38 / (dim.max(1) as f64).sqrt()).ln() - 1.0, target)
    }

    pub fn frozen(mut self) -> Self {
        self.adapt = false;
        self
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.iteration == 0 {
            0.0
        } else {
            self.accept_count as f64 / self.iteration as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RwOutcome {
    pub next: Vec<f64>,
    pub log_target: f64,
    pub accepted: bool,
}

/// One adaptive random-walk Metropolis step.
///
/// Proposes `current + exp(log_step)·ε`, accepts with probability
/// `min(1, exp(Δ log target))`, then moves `log_step` by
/// `t^{-0.6}·(accepted − target_accept)`.
pub fn arwmh_step<R, F>(
    current: &[f64],
    mut log_target: F,
    state: &mut AdaptiveRwState,
    rng: &mut R,
) -> Result<RwOutcome>
where
    R: Rng + ?Sized,
    F: FnMut(&[f64]) -> Result<f64>,
{
    let lp_current = log_target(current)?;
    if !lp_current.is_finite() {
        return Err(Error::Kernel(format!(
            "log target is {lp_current} at the current state"
        )));
    }
    let step = state.log_step.exp();
    let proposal: Vec<f64> = current
        .iter()
        .map(|&x| x + step * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let lp_prop = log_target(&proposal)?;
    if lp_prop.is_nan() {
        return Err(Error::Kernel("log target returned NaN at the proposal".into()));
    }
    let u: f64 = rng.random();
    let accepted = lp_prop > f64::NEG_INFINITY && u.ln() < lp_prop - lp_current;

    state.iteration += 1;
    if accepted {
        state.accept_count += 1;
    }
    if state.adapt {
        let gain = (state.iteration as f64).powf(-ADAPT_EXPONENT);
        let signal = if accepted { 1.0 } else { 0.0 } - state.target_accept;
        state.log_step += gain * signal;
    }

    Ok(if accepted {
        RwOutcome {
            next: proposal,
            log_target: lp_prop,
            accepted,
        }
    } else {
        RwOutcome {
            next: current.to_vec(),
            log_target: lp_current,
            accepted,
        }
    })
}
