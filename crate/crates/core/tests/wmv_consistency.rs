use std::collections::BTreeMap;
use std::sync::Arc;

use qalign_core::backends::EnumerableGenerator;
use qalign_core::decision::{expected_utilities, extract_answer, is_weights, mbr_select, AnswerExtractor, Utility};
use qalign_core::rng::seeded;
use qalign_core::sampler::independent_samples;
use qalign_core::space::presets;
use qalign_core::{BetaParam, Prompt};
use rand::Rng;

#[test]
fn weighted_vote_tracks_exact_answer_mass() {
    let mut rng = seeded(77);
    let table: Vec<f64> = (0..39).map(|_| rng.gen_range(0.0..2.0)).collect();
    let space = Arc::new(presets::digits_upto3(|k| table[k]));
    let beta = 1.0;

    // exact answer-class mass under the tilted target
    let all = space.enumerate().unwrap();
    let mut mass: BTreeMap<String, f64> = BTreeMap::new();
    let mut z = 0.0;
    for ids in &all {
        let w = space.log_prob(ids).exp() * (space.reward(ids) / beta).exp();
        z += w;
        *mass.entry(space.render_ids(ids).rsplit(' ').next().unwrap().to_owned()).or_default() += w;
    }
    mass.values_mut().for_each(|m| *m /= z);

    let gen = EnumerableGenerator::new(space.clone(), 1);
    let p = Prompt::new("p", "q").unwrap();
    let batch = independent_samples(&p, &gen, 1, 20_000, 3, 5).unwrap();
    let rewards: Vec<f64> = batch.samples.iter().map(|s| space.reward_of_text(s.text()).unwrap()).collect();
    let w = is_weights(&rewards, BetaParam::new(beta).unwrap());
    let eu = expected_utilities(&batch.samples, &w, Utility::ExactMatch, AnswerExtractor::LastNumber);
    for (s, u) in batch.samples.iter().zip(&eu) {
        let a = extract_answer(AnswerExtractor::LastNumber, s);
        assert!((u - mass[&a]).abs() < 0.02, "{a}: {u} vs {}", mass[&a]);
    }
    let sel = mbr_select(&batch.samples, Some(&w), Utility::ExactMatch, AnswerExtractor::LastNumber).unwrap();
    let best = mass.iter().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
    assert_eq!(&extract_answer(AnswerExtractor::LastNumber, &batch.samples[sel.index]), best);
}
