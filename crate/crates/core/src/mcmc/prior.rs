use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum Prior {
    InverseGamma { shape: f64, scale: f64 },
    Normal { mean: f64, variance: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl Prior {
    pub fn inverse_gamma(shape: f64, scale: f64) -> Result<Self> {
        if !(shape > 0.0 && scale > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "inverse-gamma needs shape, scale > 0 (got {shape}, {scale})"
            )));
        }
        Ok(Self::InverseGamma { shape, scale })
    }

    pub fn normal(mean: f64, variance: f64) -> Result<Self> {
        if !(variance > 0.0) || !mean.is_finite() {
            return Err(Error::InvalidArgument(format!("normal prior needs variance > 0 (got {variance})")));
        }
        Ok(Self::Normal { mean, variance })
    }

    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidArgument(format!("uniform prior needs lo < hi (got {lo}, {hi})")));
        }
        Ok(Self::Uniform { lo, hi })
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::InverseGamma { shape, scale } => Self::inverse_gamma(shape, scale).map(|_| ()),
            Self::Normal { mean, variance } => Self::normal(mean, variance).map(|_| ()),
            Self::Uniform { lo, hi } => Self::uniform(lo, hi).map(|_| ()),
        }
    }

    pub fn log_density(&self, x: f64) -> f64 {
        match *self {
            Self::InverseGamma { shape, scale } => {
                if x <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                shape * scale.ln() - ln_gamma(shape) - (shape + 1.0) * x.ln() - scale / x
            }
            Self::Normal { mean, variance } => {
                -0.5 * (2.0 * std::f64::consts::PI * variance).ln() - (x - mean).powi(2) / (2.0 * variance)
            }
            Self::Uniform { lo, hi } => {
                if x > lo && x < hi {
                    -(hi - lo).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    /// Sampler scale matching the prior's support.
    pub fn natural_transform(&self) -> Transform {
        match *self {
            Self::InverseGamma { .. } => Transform::Log,
            Self::Normal { .. } => Transform::Identity,
            Self::Uniform { lo, hi } => Transform::Logit { lo, hi },
        }
    }
}

/// Prior attached to a chain parameter. With `on_square` the distribution is
/// placed on `θ²` (e.g. an inverse-gamma on σ² while the chain tracks σ).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamPrior {
    pub prior: Prior,
    #[serde(default)]
    pub on_square: bool,
}

impl ParamPrior {
    pub fn new(prior: Prior) -> Self {
        Self { prior, on_square: false }
    }

    pub fn on_square(prior: Prior) -> Self {
        Self { prior, on_square: true }
    }

    pub fn log_density(&self, theta: f64) -> f64 {
        if self.on_square {
            if theta <= 0.0 {
                return f64::NEG_INFINITY;
            }
            self.prior.log_density(theta * theta) + (2.0 * theta).ln()
        } else {
            self.prior.log_density(theta)
        }
    }

    pub fn transform(&self) -> Transform {
        if self.on_square {
            Transform::Log
        } else {
            self.prior.natural_transform()
        }
    }
}

/// Map from a constrained parameter to the unconstrained sampler scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Transform {
    Identity,
    Log,
    Logit { lo: f64, hi: f64 },
}

impl Transform {
    pub fn to_unconstrained(&self, x: f64) -> f64 {
        match *self {
            Self::Identity => x,
            Self::Log => x.ln(),
            Self::Logit { lo, hi } => {
                let t = (x - lo) / (hi - lo);
                (t / (1.0 - t)).ln()
            }
        }
    }

    pub fn to_constrained(&self, u: f64) -> f64 {
        match *self {
            Self::Identity => u,
            Self::Log => u.exp(),
            Self::Logit { lo, hi } => lo + (hi - lo) * sigmoid(u),
        }
    }

    /// `log |dx/du|`
    pub fn log_jacobian(&self, u: f64) -> f64 {
        match *self {
            Self::Identity => 0.0,
            Self::Log => u,
            Self::Logit { lo, hi } => {
                // log σ(u) + log(1 − σ(u)) computed stably
                (hi - lo).ln() - softplus(-u) - softplus(u)
            }
        }
    }
}

fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

fn softplus(u: f64) -> f64 {
    if u > 30.0 {
        u
    } else {
        u.exp().ln_1p()
    }
}
