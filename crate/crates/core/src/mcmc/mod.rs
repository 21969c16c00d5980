//! MCMC transition kernels and the chain driver.

pub mod arwmh;
pub mod chain;
pub mod diagnostics;
pub mod ess;
pub mod prior;

pub use arwmh::{arwmh_step, AdaptiveRwState, RwOutcome};
pub use chain::{run_chain, Block, ChainConfig, Draw, FactorCache, PosteriorChain, PosteriorProgram, State, LOGLIK};
pub use diagnostics::{inefficiency_factor, summarize, ParamSummary};
pub use ess::{ess_step, EssOutcome};
pub use prior::{ParamPrior, Prior, Transform};
