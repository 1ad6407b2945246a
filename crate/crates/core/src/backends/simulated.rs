//! An in-process stand-in for a completions + scoring server, backed by an
//! enumerable space. Lets the HTTP code path, recording and replay run
//! offline.

use std::sync::Arc;

use serde_json::{json, Value};

use crate::backends::api::{COMPLETIONS_ENDPOINT, SCORE_ENDPOINT};
use crate::backends::transport::{Recorder, Transport};
use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::space::EnumerableSpace;

/// Answers `/v1/completions` and `/score` from an [`EnumerableSpace`].
///
/// The response prefix is read from the last line of the request prompt when
/// every word on it is a vocabulary unit; otherwise the prefix is empty.
/// Sampling is seeded by the request's `seed` field.
pub struct SimulatedEndpoint {
    space: Arc<EnumerableSpace>,
}

impl SimulatedEndpoint {
    pub fn new(space: Arc<EnumerableSpace>) -> Self {
        Self { space }
    }

    fn prefix_ids(&self, prompt: &str) -> Vec<usize> {
        let Some((_, last)) = prompt.rsplit_once('\n') else {
            return Vec::new();
        };
        let words: Vec<String> = last.split_whitespace().map(str::to_owned).collect();
        if words.is_empty() {
            return Vec::new();
        }
        self.space.token_ids(&words).unwrap_or_default()
    }

    fn complete(&self, body: &Value) -> Result<Value> {
        let field = |k: &str| body.get(k).ok_or_else(|| Error::Transport(format!("request without {k}")));
        let prompt = field("prompt")?.as_str().unwrap_or_default();
        let max_new = field("max_tokens")?.as_u64().unwrap_or(0) as usize;
        let seed = field("seed")?.as_u64().unwrap_or(0);
        let prefix = self.prefix_ids(prompt);
        let mut rng = seeded(seed);
        let ids = self
            .space
            .sample_continuation(&prefix, max_new, !prefix.is_empty(), &mut rng);
        let text = self.space.render_ids(&ids[prefix.len()..]);
        Ok(json!({"choices": [{"text": text}]}))
    }

    fn score(&self, body: &Value) -> Result<Value> {
        let response = body
            .get("response")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Transport("score request without response".into()))?;
        let reward = self
            .space
            .reward_of_text(response)
            .map_err(|e| Error::Transport(format!("HTTP 400: {e}")))?;
        Ok(json!({ "reward": reward }))
    }
}

impl Transport for SimulatedEndpoint {
    fn post(&self, endpoint: &str, body: &Value) -> Result<Value> {
        match endpoint {
            COMPLETIONS_ENDPOINT => self.complete(body),
            SCORE_ENDPOINT => self.score(body),
            other => Err(Error::Transport(format!("HTTP 404: {other}"))),
        }
    }
}

/// Records every successful exchange of an inner transport.
pub struct RecordingTransport {
    inner: Arc<dyn Transport>,
    recorder: Recorder,
}

impl RecordingTransport {
    pub fn new(inner: Arc<dyn Transport>, recorder: Recorder) -> Self {
        Self { inner, recorder }
    }
}

impl Transport for RecordingTransport {
    fn post(&self, endpoint: &str, body: &Value) -> Result<Value> {
        let resp = self.inner.post(endpoint, body)?;
        self.recorder.record(endpoint, body, &resp)?;
        Ok(resp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{ApiGenerator, ApiReward, CachedReward, ReplayTransport};
    use crate::sampler::{qalign_chain, QAlignConfig};
    use crate::space::presets;
    use crate::types::{BetaParam, ChainRecord, Prompt, UnitKind};

    fn chain(t: Arc<dyn Transport>) -> Vec<String> {
        let gen = ApiGenerator::new(t.clone(), "toy", 1.0, UnitKind::Word, 1).unwrap();
        let rm = CachedReward::new(Arc::new(ApiReward::new(t, 1)));
        let p = Prompt::new("p", "Pick letters.").unwrap();
        let cfg = QAlignConfig::new(BetaParam::new(1.0).unwrap(), 40, 4, 3).unwrap();
        qalign_chain(&cfg, &p, &gen, &rm).unwrap().records.iter().map(ChainRecord::to_json_line).collect()
    }

    #[test]
    fn prefix_is_kept_and_extended() {
        let ep = SimulatedEndpoint::new(Arc::new(presets::binary_upto4()));
        let out = ep
            .post(COMPLETIONS_ENDPOINT, &json!({"prompt": "Q\nA B", "max_tokens": 2, "seed": 9}))
            .unwrap();
        let text = out["choices"][0]["text"].as_str().unwrap();
        assert!(!text.is_empty() && text.split(' ').count() <= 2);
        let score = ep.post(SCORE_ENDPOINT, &json!({"response": "A A"})).unwrap();
        assert!((score["reward"].as_f64().unwrap() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn recording_then_replay_is_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.jsonl");
        let sim: Arc<dyn Transport> = Arc::new(SimulatedEndpoint::new(Arc::new(presets::binary_upto4())));
        let rec = chain(Arc::new(RecordingTransport::new(sim, Recorder::create(&path).unwrap())));
        let rep = chain(Arc::new(ReplayTransport::from_jsonl(&path).unwrap()));
        assert_eq!(rec, rep);
    }
}
