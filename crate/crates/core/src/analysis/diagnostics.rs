//! Exact kernels and convergence checks on enumerable spaces.

use std::collections::HashMap;

use serde::Serialize;

use crate::error::Result;
use crate::sampler::{AcceptInputs, ChainResult};
use crate::space::EnumerableSpace;
use crate::target::{score_space, ExactDistribution};
use crate::types::{BetaParam, ScoredSequence};

/// The full one-step transition matrix of the suffix-resampling chain:
/// `K(y→y') = Σ_i (1/|y|)·q_i(y'|y)·α_i(y',y)`, plus the rejected mass on the
/// diagonal.
#[derive(Debug, Clone)]
pub struct Kernel {
    pub states: Vec<ScoredSequence>,
    pub matrix: Vec<Vec<f64>>,
    /// Probability of rejecting the proposal, per state.
    pub reject: Vec<f64>,
}

impl Kernel {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// `pi K` for a row vector `pi`.
    pub fn apply(&self, pi: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        for (a, row) in self.matrix.iter().enumerate() {
            for (b, k) in row.iter().enumerate() {
                out[b] += pi[a] * k;
            }
        }
        out
    }

    /// Stationary acceptance rate `Σ_y pi(y)·(1 - reject(y))`.
    pub fn acceptance_rate(&self, pi: &[f64]) -> f64 {
        pi.iter().zip(&self.reject).map(|(p, r)| p * (1.0 - r)).sum()
    }
}

pub fn build_kernel(
    space: &EnumerableSpace,
    beta: BetaParam,
    alpha: impl Fn(AcceptInputs) -> f64,
) -> Result<Kernel> {
    let states = score_space(space)?;
    let ids: Vec<Vec<usize>> = space.enumerate()?;
    let n = states.len();
    let mut matrix = vec![vec![0.0; n]; n];
    let mut reject = vec![0.0; n];
    for (a, y) in ids.iter().enumerate() {
        let len = y.len();
        for cut in 0..len {
            let prefix = &y[..cut];
            for (b, y2) in ids.iter().enumerate() {
                if y2.len() <= cut || y2[..cut] != *prefix {
                    continue;
                }
                let q = space.suffix_log_prob(prefix, y2).exp();
                if q == 0.0 {
                    continue;
                }
                let acc = alpha(AcceptInputs {
                    reward_proposal: states[b].reward,
                    reward_current: states[a].reward,
                    len_proposal: y2.len(),
                    len_current: len,
                    beta: beta.get(),
                });
                let m = q / len as f64;
                matrix[a][b] += m * acc;
                matrix[a][a] += m * (1.0 - acc);
                reject[a] += m * (1.0 - acc);
            }
        }
    }
    Ok(Kernel { states, matrix, reject })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StationarityReport {
    /// `||pi K - pi||_1`.
    pub l1_residual: f64,
    /// Largest `|pi(y)K(y→y') - pi(y')K(y'→y)|`.
    pub detailed_balance_gap: f64,
    /// Smallest off-diagonal entry; positive means every state reaches every
    /// other in one step.
    pub min_transition: f64,
    pub min_self_loop: f64,
    /// Largest deviation of a row sum from 1.
    pub row_sum_error: f64,
}

pub fn kernel_stationarity(kernel: &Kernel, pi: &[f64]) -> StationarityReport {
    let pk = kernel.apply(pi);
    let l1_residual = pk.iter().zip(pi).map(|(a, b)| (a - b).abs()).sum();
    let n = kernel.len();
    let mut gap = 0.0f64;
    let mut min_transition = f64::INFINITY;
    let mut min_self_loop = f64::INFINITY;
    let mut row_sum_error = 0.0f64;
    for a in 0..n {
        row_sum_error = row_sum_error.max((kernel.matrix[a].iter().sum::<f64>() - 1.0).abs());
        min_self_loop = min_self_loop.min(kernel.matrix[a][a]);
        for b in 0..n {
            if a != b {
                min_transition = min_transition.min(kernel.matrix[a][b]);
                gap = gap.max((pi[a] * kernel.matrix[a][b] - pi[b] * kernel.matrix[b][a]).abs());
            }
        }
    }
    if n == 1 {
        min_transition = 1.0;
    }
    StationarityReport {
        l1_residual,
        detailed_balance_gap: gap,
        min_transition,
        min_self_loop,
        row_sum_error,
    }
}

/// TV between the empirical distribution of `states` (after dropping the
/// first `burn_in` fraction) and the exact target.
pub fn empirical_tv<'a>(
    states: impl IntoIterator<Item = &'a ScoredSequence>,
    exact: &ExactDistribution,
    burn_in: f64,
) -> f64 {
    let states: Vec<&ScoredSequence> = states.into_iter().collect();
    let skip = (states.len() as f64 * burn_in).floor() as usize;
    let mut counts: HashMap<String, usize> = HashMap::new();
    for s in &states[skip..] {
        *counts.entry(s.text().to_owned()).or_default() += 1;
    }
    exact.tv_to_counts(&counts)
}

#[derive(Debug, Clone, Serialize)]
pub struct ChainReport {
    pub steps: usize,
    pub acceptance_rate: f64,
    pub reward_trace: Vec<f64>,
    /// `(step, tv)` using all states up to `step`, 10% burn-in.
    pub tv_curve: Option<Vec<(usize, f64)>>,
    pub final_tv: Option<f64>,
    pub stationarity_residual: Option<f64>,
}

/// Acceptance rate, reward trace, and, given the exact target, a TV-vs-steps
/// curve sampled at `points` evenly spaced steps.
pub fn chain_report(
    chain: &ChainResult,
    exact: Option<&ExactDistribution>,
    kernel: Option<&Kernel>,
    points: usize,
) -> ChainReport {
    let states = chain.states();
    let tv_curve = exact.map(|pi| {
        let total = states.len();
        let points = points.clamp(1, total);
        (1..=points)
            .map(|k| {
                let upto = (total * k / points).max(1);
                (upto - 1, empirical_tv(states[..upto].iter().copied(), pi, 0.1))
            })
            .collect::<Vec<_>>()
    });
    let final_tv = tv_curve.as_ref().and_then(|c| c.last().map(|p| p.1));
    let stationarity_residual = match (exact, kernel) {
        (Some(pi), Some(k)) => Some(kernel_stationarity(k, &pi.probabilities()).l1_residual),
        _ => None,
    };
    ChainReport {
        steps: chain.steps(),
        acceptance_rate: chain.acceptance_rate,
        reward_trace: states.iter().map(|s| s.reward).collect(),
        tv_curve,
        final_tv,
        stationarity_residual,
    }
}
