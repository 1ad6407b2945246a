use std::collections::HashMap;
use std::sync::Arc;

use qalign_core::backends::{CachedReward, EnumerableGenerator, SpaceReward};
use qalign_core::sampler::{qalign_chain, QAlignConfig};
use qalign_core::space::{presets, EnumerableSpace};
use qalign_core::{BetaParam, Prompt};

/// Exact tilted target by brute force, keyed by rendered text.
fn brute_force_target(space: &EnumerableSpace, beta: f64) -> HashMap<String, f64> {
    let all = space.enumerate().unwrap();
    let w: Vec<f64> = all.iter().map(|ids| space.log_prob(ids).exp() * (space.reward(ids) / beta).exp()).collect();
    let z: f64 = w.iter().sum();
    all.iter().zip(w).map(|(ids, w)| (space.render_ids(ids), w / z)).collect()
}

fn chain_tv(space: EnumerableSpace, beta: f64, steps: usize, seed: u64) -> f64 {
    let exact = brute_force_target(&space, beta);
    let max_len = space.max_len();
    let space = Arc::new(space);
    let gen = EnumerableGenerator::new(space.clone(), 1);
    let rm = CachedReward::new(Arc::new(SpaceReward::new(space, 1)));
    let p = Prompt::new("p", "q").unwrap();
    let cfg = QAlignConfig::new(BetaParam::new(beta).unwrap(), steps, max_len, seed).unwrap();
    let chain = qalign_chain(&cfg, &p, &gen, &rm).unwrap();
    let mut counts: HashMap<String, f64> = HashMap::new();
    for s in chain.states() {
        *counts.entry(s.text().to_owned()).or_default() += 1.0;
    }
    let n = chain.states().len() as f64;
    0.5 * exact.iter().map(|(k, p)| (counts.get(k).copied().unwrap_or(0.0) / n - p).abs()).sum::<f64>()
}

#[test]
fn four_sequence_chain_converges() {
    let tv = chain_tv(presets::four_sequences(), 1.0, 20_000, 1);
    assert!(tv < 0.05, "tv {tv}");
}

#[test]
fn variable_length_chain_converges() {
    for beta in [0.5, 1.0, 2.0] {
        let tv = chain_tv(presets::binary_upto4(), beta, 20_000, 2);
        assert!(tv < 0.05, "beta {beta}: tv {tv}");
    }
}
