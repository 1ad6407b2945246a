//! Pick `beta` so short pilot chains accept about half their proposals.

use rayon::prelude::*;
use serde::Serialize;

use crate::backends::{CachedReward, GenerationBackend};
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::sampler::{qalign_chain, QAlignConfig};
use crate::types::{BetaParam, Prompt};

#[derive(Debug, Clone)]
pub struct TuneOptions {
    pub target_rate: f64,
    pub tol: f64,
    pub pilot_steps: usize,
    pub rounds: usize,
    /// Search interval for `ln beta`.
    pub log_lo: f64,
    pub log_hi: f64,
    pub max_len: usize,
    pub seed: u64,
}

impl TuneOptions {
    pub fn new(max_len: usize, seed: u64) -> Self {
        Self {
            target_rate: 0.5,
            tol: 0.05,
            pilot_steps: 32,
            rounds: 12,
            log_lo: -6.0,
            log_hi: 6.0,
            max_len,
            seed,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TuneOutcome {
    pub beta: f64,
    pub rate: f64,
    /// Pilot evaluations, endpoints included.
    pub rounds: usize,
    /// `(beta, rate)` for every evaluation, in order.
    pub history: Vec<(f64, f64)>,
    pub generated_tokens: u64,
    pub warning: Option<String>,
}

/// Mean acceptance rate of one pilot chain per prompt. Pilot seeds do not
/// depend on `beta`, so every evaluation sees the same random streams.
pub fn pilot_rate(
    pilots: &[Prompt],
    gen: &dyn GenerationBackend,
    rm: &CachedReward,
    beta: BetaParam,
    opts: &TuneOptions,
) -> Result<(f64, u64)> {
    let runs: Vec<Result<(f64, u64)>> = pilots
        .par_iter()
        .map(|p| {
            let cfg = QAlignConfig::new(beta, opts.pilot_steps, opts.max_len, derive_seed(opts.seed, &p.id, 0))?;
            let chain = qalign_chain(&cfg, p, gen, rm)?;
            Ok((chain.acceptance_rate, chain.ledger.generated_tokens))
        })
        .collect();
    let mut rate = 0.0;
    let mut tokens = 0;
    for r in runs {
        let (a, t) = r?;
        rate += a;
        tokens += t;
    }
    Ok((rate / pilots.len() as f64, tokens))
}

/// Bisection on `ln beta`. Larger `beta` flattens the reward term, so the
/// acceptance rate grows with `beta`.
pub fn tune_beta(
    pilots: &[Prompt],
    gen: &dyn GenerationBackend,
    rm: &CachedReward,
    opts: &TuneOptions,
) -> Result<TuneOutcome> {
    if pilots.is_empty() {
        return Err(Error::InvalidArgument("no pilot prompts".into()));
    }
    if !(opts.log_lo < opts.log_hi) || opts.pilot_steps == 0 {
        return Err(Error::InvalidArgument("empty search interval or zero pilot steps".into()));
    }
    let mut history = Vec::new();
    let mut tokens = 0u64;
    let mut eval = |log_b: f64, history: &mut Vec<(f64, f64)>| -> Result<f64> {
        let b = BetaParam::new(log_b.exp())?;
        let (rate, t) = pilot_rate(pilots, gen, rm, b, opts)?;
        tokens += t;
        history.push((b.get(), rate));
        Ok(rate)
    };
    let target = opts.target_rate;
    let rate_hi = eval(opts.log_hi, &mut history)?;
    if target >= rate_hi - opts.tol {
        let warning = (target > rate_hi + opts.tol).then(|| {
            format!("target rate {target} unreachable; largest beta gives {rate_hi:.3}")
        });
        return Ok(finish(opts.log_hi.exp(), rate_hi, history, tokens, warning));
    }
    let rate_lo = eval(opts.log_lo, &mut history)?;
    if target <= rate_lo + opts.tol {
        let warning = (target < rate_lo - opts.tol).then(|| {
            format!("target rate {target} unreachable; smallest beta gives {rate_lo:.3}")
        });
        return Ok(finish(opts.log_lo.exp(), rate_lo, history, tokens, warning));
    }

    let (mut lo, mut hi) = (opts.log_lo, opts.log_hi);
    for _ in 0..opts.rounds {
        let mid = 0.5 * (lo + hi);
        let rate = eval(mid, &mut history)?;
        if (rate - target).abs() <= opts.tol {
            return Ok(finish(mid.exp(), rate, history, tokens, None));
        }
        if rate < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let &(beta, rate) = history
        .iter()
        .min_by(|a, b| (a.1 - target).abs().total_cmp(&(b.1 - target).abs()))
        .expect("at least two evaluations");
    let warning = Some(format!(
        "no beta within {} of rate {target} after {} rounds; using the closest",
        opts.tol, opts.rounds
    ));
    Ok(finish(beta, rate, history, tokens, warning))
}

fn finish(beta: f64, rate: f64, history: Vec<(f64, f64)>, tokens: u64, warning: Option<String>) -> TuneOutcome {
    TuneOutcome { beta, rate, rounds: history.len(), history, generated_tokens: tokens, warning }
}
