//! Test-time alignment by Markov chain Monte Carlo.
//!
//! The engine samples from the reward-tilted distribution
//! `pi(y|x) ∝ p_LM(y|x) · exp(r(y,x)/beta)` of a black-box language model using
//! Metropolis-Hastings with suffix-resampling proposals, and compares it with
//! independent-sampling baselines (best-of-n, majority vote, importance-weighted
//! majority vote). Enumerable toy spaces make every quantity exactly computable,
//! which is what the oracle checks in [`analysis`] rely on.

pub mod analysis;
pub mod backends;
pub mod decision;
pub mod error;
pub mod rng;
pub mod sampler;
pub mod space;
pub mod target;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    BetaParam, BudgetCurve, BudgetPoint, ChainRecord, MixtureFit, Prompt, ScoredSequence,
    Sequence, UnitKind,
};
