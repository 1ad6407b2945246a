use std::sync::Arc;

use crate::backends::{Capabilities, Completion, GenerationBackend, RewardBackend};
use crate::decision::{extract_answer, normalize_answer, AnswerExtractor};
use crate::error::Result;
use crate::rng::ChainRng;
use crate::space::EnumerableSpace;
use crate::types::{Prompt, Sequence, UnitKind};

/// Toy language model backed by an [`EnumerableSpace`]. The prompt is ignored.
pub struct EnumerableGenerator {
    space: Arc<EnumerableSpace>,
    param_count: u64,
}

impl EnumerableGenerator {
    pub fn new(space: Arc<EnumerableSpace>, param_count: u64) -> Self {
        Self { space, param_count }
    }

    pub fn space(&self) -> &EnumerableSpace {
        &self.space
    }
}

impl GenerationBackend for EnumerableGenerator {
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            can_score_exact: true,
            unit_kind: UnitKind::BackendToken,
            param_count: self.param_count,
            temperature: self.space.temperature(),
        }
    }

    fn complete(
        &self,
        _prompt: &Prompt,
        prefix: &[String],
        max_new: usize,
        rng: &mut ChainRng,
    ) -> Result<Completion> {
        let prefix_ids = self.space.token_ids(prefix)?;
        let ids = self
            .space
            .sample_continuation(&prefix_ids, max_new, !prefix_ids.is_empty(), rng);
        Ok(Completion {
            tokens_generated: ids.len() - prefix_ids.len(),
            seq: self.space.to_sequence(&ids)?,
        })
    }

    fn log_prob(&self, _prompt: &Prompt, seq: &Sequence) -> Option<f64> {
        let ids = self.space.token_ids(seq.tokens()).ok()?;
        Some(self.space.log_prob(&ids))
    }
}

/// Reward read from the space definition.
pub struct SpaceReward {
    space: Arc<EnumerableSpace>,
    param_count: u64,
}

impl SpaceReward {
    pub fn new(space: Arc<EnumerableSpace>, param_count: u64) -> Self {
        Self { space, param_count }
    }
}

impl RewardBackend for SpaceReward {
    fn param_count(&self) -> u64 {
        self.param_count
    }

    fn deterministic(&self) -> bool {
        true
    }

    fn score(&self, _prompt: &Prompt, seq: &Sequence) -> Result<f64> {
        Ok(self.space.reward(&self.space.token_ids(seq.tokens())?))
    }
}

/// `r = 1{answer(y) = gold}` with the gold answer taken from prompt metadata.
pub struct ExactMatchReward {
    extractor: AnswerExtractor,
    param_count: u64,
}

impl ExactMatchReward {
    pub fn new(extractor: AnswerExtractor, param_count: u64) -> Self {
        Self { extractor, param_count }
    }
}

impl RewardBackend for ExactMatchReward {
    fn param_count(&self) -> u64 {
        self.param_count
    }

    fn deterministic(&self) -> bool {
        true
    }

    fn score(&self, prompt: &Prompt, seq: &Sequence) -> Result<f64> {
        let Some(gold) = prompt.gold() else {
            return Ok(0.0);
        };
        let answer = extract_answer(self.extractor, seq);
        Ok(f64::from(u8::from(answer == normalize_answer(self.extractor, gold))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::space::presets;

    #[test]
    fn uniform_four_sequence_frequencies() {
        let space = Arc::new(presets::four_sequences());
        let gen = EnumerableGenerator::new(space, 1);
        let p = Prompt::new("p", "q").unwrap();
        let mut rng = seeded(5);
        let mut counts = std::collections::HashMap::new();
        let draws = 100_000;
        for _ in 0..draws {
            let c = gen.complete(&p, &[], 2, &mut rng).unwrap();
            assert_eq!(c.tokens_generated, 2);
            *counts.entry(c.seq.text().to_owned()).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 4);
        for (_, c) in counts {
            assert!((c as f64 / draws as f64 - 0.25).abs() < 0.01);
        }
    }

    #[test]
    fn full_prefix_unchanged() {
        let gen = EnumerableGenerator::new(Arc::new(presets::four_sequences()), 1);
        let p = Prompt::new("p", "q").unwrap();
        let prefix = vec!["A".to_owned(), "B".to_owned()];
        let c = gen.complete(&p, &prefix, 3, &mut seeded(0)).unwrap();
        assert_eq!(c.tokens_generated, 0);
        assert_eq!(c.seq.tokens(), prefix.as_slice());
    }

    #[test]
    fn table_and_exact_match_rewards() {
        let space = Arc::new(presets::four_sequences());
        let rm = SpaceReward::new(space, 1);
        let p = Prompt::new("p", "q").unwrap().with_metadata("gold", "4");
        let aa = Sequence::parse("A A", UnitKind::BackendToken).unwrap();
        assert_eq!(rm.score(&p, &aa).unwrap(), 1.0);

        let em = ExactMatchReward::new(AnswerExtractor::LastNumber, 1);
        let y = Sequence::parse("so it is 4 apples", UnitKind::Word).unwrap();
        assert_eq!(em.score(&p, &y).unwrap(), 1.0);
        let y = Sequence::parse("so it is 5", UnitKind::Word).unwrap();
        assert_eq!(em.score(&p, &y).unwrap(), 0.0);
    }
}
