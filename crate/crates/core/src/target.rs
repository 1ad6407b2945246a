//! The reward-tilted target `pi_beta(y|x) = p_LM(y|x) exp(r(y,x)/beta) / Z_beta(x)`.
//!
//! Everything is computed in log space; `exp` is only taken at the end.

use std::collections::HashMap;

use crate::analysis::logsumexp;
use crate::error::{Error, Result};
use crate::space::EnumerableSpace;
use crate::types::{BetaParam, ScoredSequence};

#[derive(Debug, Clone, PartialEq)]
pub struct TargetSpec {
    pub beta: BetaParam,
    pub reward_backend_ref: String,
    pub base_backend_ref: String,
}

impl TargetSpec {
    pub fn new(beta: BetaParam) -> Self {
        Self {
            beta,
            reward_backend_ref: "reward".into(),
            base_backend_ref: "base".into(),
        }
    }

    fn tilt(&self, reward: f64) -> f64 {
        reward / self.beta.get()
    }
}

/// `log p_LM(y|x) + r(y,x)/beta`.
pub fn log_unnormalized_density(spec: &TargetSpec, y: &ScoredSequence) -> Result<f64> {
    let lp = y
        .logprob_base
        .ok_or_else(|| Error::MissingLogprob(y.text().to_owned()))?;
    Ok(lp + spec.tilt(y.reward))
}

/// Log of the target ratio `pi(y)/pi(y_t)`. With `include_base == false` the
/// base-model terms are dropped, which is what the suffix proposal cancels.
pub fn log_target_ratio(
    spec: &TargetSpec,
    y: &ScoredSequence,
    y_t: &ScoredSequence,
    include_base: bool,
) -> Result<f64> {
    let reward_term = spec.tilt(y.reward) - spec.tilt(y_t.reward);
    if !include_base {
        return Ok(reward_term);
    }
    let lp = y.logprob_base.ok_or_else(|| Error::MissingLogprob(y.text().to_owned()))?;
    let lpt = y_t.logprob_base.ok_or_else(|| Error::MissingLogprob(y_t.text().to_owned()))?;
    Ok(reward_term + lp - lpt)
}

fn log_terms(spec: &TargetSpec, space: &[ScoredSequence]) -> Result<Vec<f64>> {
    if space.is_empty() {
        return Err(Error::EmptySamples);
    }
    let base: Vec<f64> = space
        .iter()
        .map(|y| y.logprob_base.ok_or_else(|| Error::MissingLogprob(y.text().to_owned())))
        .collect::<Result<_>>()?;
    let mass = logsumexp(&base).exp();
    if (mass - 1.0).abs() > 1e-9 {
        return Err(Error::Unnormalized(mass));
    }
    space.iter().map(|y| log_unnormalized_density(spec, y)).collect()
}

/// `Z_beta = sum_y p_LM(y) exp(r(y)/beta)` over a complete finite space.
pub fn log_partition_function(spec: &TargetSpec, space: &[ScoredSequence]) -> Result<f64> {
    Ok(logsumexp(&log_terms(spec, space)?))
}

pub fn partition_function(spec: &TargetSpec, space: &[ScoredSequence]) -> Result<f64> {
    log_partition_function(spec, space).map(f64::exp)
}

/// Exact target probabilities over an enumerated space, in input order.
#[derive(Debug, Clone)]
pub struct ExactDistribution {
    pub entries: Vec<(ScoredSequence, f64)>,
    index: HashMap<String, usize>,
}

impl ExactDistribution {
    pub fn probability(&self, text: &str) -> f64 {
        self.index.get(text).map_or(0.0, |&i| self.entries[i].1)
    }

    pub fn position(&self, text: &str) -> Option<usize> {
        self.index.get(text).copied()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.entries.iter().map(|(_, p)| *p).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total variation distance between this distribution and empirical
    /// counts keyed by rendered text. Unknown texts count as mass outside.
    pub fn tv_to_counts(&self, counts: &HashMap<String, usize>) -> f64 {
        let total: usize = counts.values().sum();
        if total == 0 {
            return 1.0;
        }
        let mut l1 = 0.0;
        for (seq, p) in &self.entries {
            let q = *counts.get(seq.text()).unwrap_or(&0) as f64 / total as f64;
            l1 += (p - q).abs();
        }
        let outside: usize = counts
            .iter()
            .filter(|(k, _)| !self.index.contains_key(*k))
            .map(|(_, v)| v)
            .sum();
        l1 += outside as f64 / total as f64;
        0.5 * l1
    }
}

pub fn exact_distribution(spec: &TargetSpec, space: &[ScoredSequence]) -> Result<ExactDistribution> {
    let terms = log_terms(spec, space)?;
    let log_z = logsumexp(&terms);
    let entries: Vec<_> = space
        .iter()
        .zip(&terms)
        .map(|(y, t)| (y.clone(), (t - log_z).exp()))
        .collect();
    let index = entries
        .iter()
        .enumerate()
        .map(|(i, (y, _))| (y.text().to_owned(), i))
        .collect();
    Ok(ExactDistribution { entries, index })
}

/// Score every sequence of an enumerable space with its reward and exact base log-probability.
pub fn score_space(space: &EnumerableSpace) -> Result<Vec<ScoredSequence>> {
    space
        .enumerate()?
        .iter()
        .map(|ids| {
            Ok(ScoredSequence::new(space.to_sequence(ids)?, space.reward(ids))?
                .with_logprob(space.log_prob(ids)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::presets;
    use crate::types::{Sequence, UnitKind};

    fn spec(beta: f64) -> TargetSpec {
        TargetSpec::new(BetaParam::new(beta).unwrap())
    }

    fn scored(reward: f64, lp: Option<f64>) -> ScoredSequence {
        let s = ScoredSequence::new(Sequence::from_strs(&["A"], UnitKind::Word).unwrap(), reward).unwrap();
        match lp {
            Some(lp) => s.with_logprob(lp),
            None => s,
        }
    }

    /// Brute-force oracle: sum p·exp(r/beta) directly in linear space.
    fn oracle_z(space: &[ScoredSequence], beta: f64) -> f64 {
        space
            .iter()
            .map(|y| y.logprob_base.unwrap().exp() * (y.reward / beta).exp())
            .sum()
    }

    #[test]
    fn unnormalized_density_examples() {
        let y = scored(1.0, Some(0.25f64.ln()));
        let v = log_unnormalized_density(&spec(1.0), &y).unwrap();
        assert!((v - (-0.386_294_361_119_890_6)).abs() < 1e-12);
        assert_eq!(log_unnormalized_density(&spec(1.0), &scored(0.0, Some(0.0))).unwrap(), 0.0);
        let far = log_unnormalized_density(&spec(1e12), &scored(3.0, Some(-2.0))).unwrap();
        assert!((far + 2.0).abs() < 1e-9);
        assert!(matches!(
            log_unnormalized_density(&spec(1.0), &scored(1.0, None)),
            Err(Error::MissingLogprob(_))
        ));
    }

    #[test]
    fn partition_function_four_sequences() {
        let space = score_space(&presets::four_sequences()).unwrap();
        let z = partition_function(&spec(1.0), &space).unwrap();
        let oracle = oracle_z(&space, 1.0);
        assert!((z - oracle).abs() < 1e-12);
        // 0.25 e + 0.75
        assert!((z - 1.429_570_457_114_761).abs() < 1e-12);
        assert!((partition_function(&spec(1e12), &space).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_rewards_give_unit_partition() {
        let space: Vec<_> = score_space(&presets::binary_upto4())
            .unwrap()
            .into_iter()
            .map(|mut y| {
                y.reward = 0.0;
                y
            })
            .collect();
        assert!((partition_function(&spec(0.3), &space).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unnormalized_space_is_rejected() {
        let mut space = score_space(&presets::four_sequences()).unwrap();
        space.pop();
        assert!(matches!(partition_function(&spec(1.0), &space), Err(Error::Unnormalized(_))));
    }

    #[test]
    fn exact_distribution_four_sequences() {
        let space = score_space(&presets::four_sequences()).unwrap();
        let pi = exact_distribution(&spec(1.0), &space).unwrap();
        let z = oracle_z(&space, 1.0);
        assert!((pi.probability("A A") - 0.25 * std::f64::consts::E / z).abs() < 1e-12);
        assert!((pi.probability("A A") - 0.475_367).abs() < 1e-5);
        for t in ["A B", "B A", "B B"] {
            assert!((pi.probability(t) - 0.174_878).abs() < 1e-5);
        }
        let flat = exact_distribution(&spec(1e12), &space).unwrap();
        for (y, p) in &flat.entries {
            assert!((p - y.logprob_base.unwrap().exp()).abs() < 1e-9);
        }
    }

    #[test]
    fn singleton_space_has_unit_mass() {
        let space = vec![scored(5.0, Some(0.0))];
        let pi = exact_distribution(&spec(0.1), &space).unwrap();
        assert_eq!(pi.entries[0].1, 1.0);
    }

    #[test]
    fn target_ratio_examples() {
        let a = scored(0.5, Some(-1.0));
        let b = scored(0.2, Some(-1.0));
        assert_eq!(log_target_ratio(&spec(1.0), &a, &a, true).unwrap(), 0.0);
        assert!((log_target_ratio(&spec(1.0), &a, &b, false).unwrap() - 0.3).abs() < 1e-12);
        assert!((log_target_ratio(&spec(0.5), &a, &b, false).unwrap() - 0.6).abs() < 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn exact_distribution_is_probability(rewards in proptest::collection::vec(-5.0f64..5.0, 30),
                                             beta_idx in 0usize..4) {
            let beta = [0.1, 0.5, 1.0, 10.0][beta_idx];
            let space: Vec<_> = score_space(&presets::binary_upto4()).unwrap().into_iter()
                .zip(&rewards).map(|(mut y, r)| { y.reward = *r; y }).collect();
            let pi = exact_distribution(&spec(beta), &space).unwrap();
            let total: f64 = pi.probabilities().iter().sum();
            proptest::prop_assert!((total - 1.0).abs() < 1e-9);
            proptest::prop_assert!(pi.probabilities().iter().all(|p| *p >= 0.0));
        }

        #[test]
        fn larger_reward_gets_more_mass(r1 in -3.0f64..3.0, r2 in -3.0f64..3.0) {
            // A B and B A are equiprobable under the base model.
            let space: Vec<_> = score_space(&presets::four_sequences()).unwrap().into_iter()
                .map(|mut y| { y.reward = match y.text() { "A B" => r1, "B A" => r2, _ => 0.0 }; y })
                .collect();
            let pi = exact_distribution(&spec(1.0), &space).unwrap();
            let (p1, p2) = (pi.probability("A B"), pi.probability("B A"));
            if r1 > r2 { proptest::prop_assert!(p1 > p2); }
            if r1 < r2 { proptest::prop_assert!(p1 < p2); }
        }

        #[test]
        fn target_ratio_antisymmetry(ra in -10.0f64..10.0, rb in -10.0f64..10.0,
                                     la in -10.0f64..0.0, lb in -10.0f64..0.0, beta in 0.5f64..5.0) {
            let (a, b) = (scored(ra, Some(la)), scored(rb, Some(lb)));
            let s = spec(beta);
            let fwd = log_target_ratio(&s, &a, &b, true).unwrap();
            let back = log_target_ratio(&s, &b, &a, true).unwrap();
            proptest::prop_assert!(((fwd.exp() * back.exp()) - 1.0).abs() < 1e-12);
        }
    }
}
