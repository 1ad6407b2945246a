//! OpenAI-compatible completions client and the `/score` reward client.
//!
//! Both speak through a [`Transport`], so the same code path serves live HTTP
//! and fixture replay.

use std::sync::Arc;

use rand::Rng;
use serde_json::{json, Value};

use crate::backends::{Capabilities, Completion, GenerationBackend, RewardBackend, Transport};
use crate::error::{Error, Result};
use crate::rng::ChainRng;
use crate::types::{Prompt, Sequence, UnitKind};

pub const COMPLETIONS_ENDPOINT: &str = "/v1/completions";
pub const SCORE_ENDPOINT: &str = "/score";

pub struct ApiGenerator {
    transport: Arc<dyn Transport>,
    model: String,
    temperature: f64,
    unit: UnitKind,
    param_count: u64,
}

impl ApiGenerator {
    pub fn new(
        transport: Arc<dyn Transport>,
        model: impl Into<String>,
        temperature: f64,
        unit: UnitKind,
        param_count: u64,
    ) -> Result<Self> {
        if !(temperature.is_finite() && temperature > 0.0) {
            return Err(Error::InvalidArgument(format!("temperature {temperature} must be positive")));
        }
        Ok(Self {
            transport,
            model: model.into(),
            temperature,
            unit,
            param_count,
        })
    }

    /// The prefix goes in the response slot, directly after the templated prompt.
    fn request_prompt(&self, prompt: &Prompt, prefix: &[String]) -> String {
        if prefix.is_empty() {
            return prompt.text.clone();
        }
        let sep = if self.unit == UnitKind::Character { "" } else { " " };
        format!("{}\n{}", prompt.text, prefix.join(sep))
    }

    fn request(&self, prompt_text: &str, max_new: usize, seed: u32) -> Result<Vec<String>> {
        let body = json!({
            "model": self.model,
            "prompt": prompt_text,
            "max_tokens": max_new,
            "temperature": self.temperature,
            "n": 1,
            "seed": seed,
        });
        let resp = self.transport.post(COMPLETIONS_ENDPOINT, &body)?;
        let text = resp
            .pointer("/choices/0/text")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Transport(format!("completion response without choices[0].text: {resp}")))?;
        let mut units = self.unit.split(text);
        units.truncate(max_new);
        Ok(units)
    }
}

impl GenerationBackend for ApiGenerator {
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            can_score_exact: false,
            unit_kind: self.unit,
            param_count: self.param_count,
            temperature: self.temperature,
        }
    }

    fn complete(
        &self,
        prompt: &Prompt,
        prefix: &[String],
        max_new: usize,
        rng: &mut ChainRng,
    ) -> Result<Completion> {
        if max_new == 0 {
            let seq = Sequence::new(prefix.to_vec(), self.unit)?;
            return Ok(Completion { seq, tokens_generated: 0 });
        }
        let prompt_text = self.request_prompt(prompt, prefix);
        // one retry on an empty continuation
        for _ in 0..2 {
            let new_units = self.request(&prompt_text, max_new, rng.gen())?;
            if new_units.is_empty() {
                continue;
            }
            let tokens_generated = new_units.len();
            let mut tokens = prefix.to_vec();
            tokens.extend(new_units);
            return Ok(Completion {
                seq: Sequence::new(tokens, self.unit)?,
                tokens_generated,
            });
        }
        Err(Error::EmptyContinuation(prompt.id.clone()))
    }
}

pub struct ApiReward {
    transport: Arc<dyn Transport>,
    param_count: u64,
}

impl ApiReward {
    pub fn new(transport: Arc<dyn Transport>, param_count: u64) -> Self {
        Self { transport, param_count }
    }
}

impl RewardBackend for ApiReward {
    fn param_count(&self) -> u64 {
        self.param_count
    }

    fn deterministic(&self) -> bool {
        true
    }

    fn score(&self, prompt: &Prompt, seq: &Sequence) -> Result<f64> {
        let body = json!({"prompt": prompt.text, "response": seq.text()});
        let resp = self.transport.post(SCORE_ENDPOINT, &body)?;
        let r = resp
            .get("reward")
            .and_then(Value::as_f64)
            .ok_or_else(|| Error::Transport(format!("score response without reward: {resp}")))?;
        if !r.is_finite() {
            return Err(Error::NonFiniteReward(r));
        }
        Ok(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::transport::{FixtureEntry, FixtureRequest, ReplayTransport};
    use crate::rng::seeded;

    fn scripted(entries: Vec<(Value, Value)>) -> Arc<dyn Transport> {
        Arc::new(ReplayTransport::from_entries(entries.into_iter().map(|(b, r)| FixtureEntry {
            request: FixtureRequest { endpoint: COMPLETIONS_ENDPOINT.into(), body: b },
            response: r,
        })))
    }

    fn body(prompt: &str, max: usize, seed: u32) -> Value {
        json!({"model": "m", "prompt": prompt, "max_tokens": max, "temperature": 1.0, "n": 1, "seed": seed})
    }

    #[test]
    fn replays_recorded_completion_verbatim() {
        let mut rng = seeded(4);
        let seed: u32 = seeded(4).gen();
        let t = scripted(vec![(body("Q", 8, seed), json!({"choices": [{"text": " the answer is 4"}]}))]);
        let g = ApiGenerator::new(t, "m", 1.0, UnitKind::Word, 1).unwrap();
        let p = Prompt::new("p", "Q").unwrap();
        let c = g.complete(&p, &[], 8, &mut rng).unwrap();
        assert_eq!(c.seq.text(), "the answer is 4");
        assert_eq!(c.tokens_generated, 4);
    }

    #[test]
    fn suffix_request_renders_prefix_after_prompt() {
        let mut probe = seeded(9);
        let seed: u32 = probe.gen();
        let t = scripted(vec![(body("Q\nthe answer", 3, seed), json!({"choices": [{"text": " is 4 apples and more"}]}))]);
        let g = ApiGenerator::new(t, "m", 1.0, UnitKind::Word, 1).unwrap();
        let p = Prompt::new("p", "Q").unwrap();
        let prefix = vec!["the".to_owned(), "answer".to_owned()];
        let c = g.complete(&p, &prefix, 3, &mut seeded(9)).unwrap();
        // truncated to max_new units
        assert_eq!(c.seq.text(), "the answer is 4 apples");
        assert_eq!(c.tokens_generated, 3);
    }

    #[test]
    fn empty_continuation_retried_once_then_error() {
        let mut probe = seeded(2);
        let (s1, s2): (u32, u32) = (probe.gen(), probe.gen());
        let empty = json!({"choices": [{"text": "  "}]});
        let t = scripted(vec![(body("Q", 4, s1), empty.clone()), (body("Q", 4, s2), empty)]);
        let g = ApiGenerator::new(t, "m", 1.0, UnitKind::Word, 1).unwrap();
        let p = Prompt::new("p", "Q").unwrap();
        assert!(matches!(
            g.complete(&p, &[], 4, &mut seeded(2)),
            Err(Error::EmptyContinuation(_))
        ));

        let mut probe = seeded(2);
        let (s1, s2): (u32, u32) = (probe.gen(), probe.gen());
        let t = scripted(vec![
            (body("Q", 4, s1), json!({"choices": [{"text": ""}]})),
            (body("Q", 4, s2), json!({"choices": [{"text": "ok"}]})),
        ]);
        let g = ApiGenerator::new(t, "m", 1.0, UnitKind::Word, 1).unwrap();
        assert_eq!(g.complete(&p, &[], 4, &mut seeded(2)).unwrap().seq.text(), "ok");
    }

    #[test]
    fn non_finite_remote_reward_rejected() {
        let t: Arc<dyn Transport> = Arc::new(ReplayTransport::from_entries([FixtureEntry {
            request: FixtureRequest {
                endpoint: SCORE_ENDPOINT.into(),
                body: json!({"prompt": "Q", "response": "x"}),
            },
            response: json!({"reward": null}),
        }]));
        let rm = ApiReward::new(t, 1);
        let p = Prompt::new("p", "Q").unwrap();
        let y = Sequence::parse("x", UnitKind::Word).unwrap();
        assert!(rm.score(&p, &y).is_err());
    }
}
