//! Value types shared across the engine.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What a single element of [`Sequence::tokens`] represents.
///
/// Fixed per backend and per run. Length ratios in the acceptance rule are
/// measured in this unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitKind {
    /// Tokens as emitted by the backend's own tokenizer (or a toy vocabulary).
    BackendToken,
    Word,
    Character,
}

impl UnitKind {
    fn separator(self) -> &'static str {
        match self {
            UnitKind::BackendToken | UnitKind::Word => " ",
            UnitKind::Character => "",
        }
    }

    /// Split rendered text back into units. Inverse of [`render`] for well-formed tokens.
    pub fn split(self, text: &str) -> Vec<String> {
        match self {
            UnitKind::BackendToken | UnitKind::Word => {
                text.split_whitespace().map(str::to_owned).collect()
            }
            UnitKind::Character => text.chars().map(String::from).collect(),
        }
    }
}

impl fmt::Display for UnitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            UnitKind::BackendToken => "backend_token",
            UnitKind::Word => "word",
            UnitKind::Character => "character",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_id: Option<String>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl Prompt {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if text.is_empty() {
            return Err(Error::InvalidArgument("prompt text must be non-empty".into()));
        }
        Ok(Self {
            id: id.into(),
            text,
            template_id: None,
            metadata: BTreeMap::new(),
        })
    }

    pub fn with_metadata(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.metadata.insert(key.into(), value.into());
        self
    }

    pub fn gold(&self) -> Option<&str> {
        self.metadata.get("gold").map(String::as_str)
    }
}

/// A tokenized response. Always holds at least one unit.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Sequence {
    tokens: Vec<String>,
    text: String,
    unit: UnitKind,
}

impl Sequence {
    pub fn new(tokens: Vec<String>, unit: UnitKind) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::EmptySequence);
        }
        let text = tokens.join(unit.separator());
        Ok(Self { tokens, text, unit })
    }

    pub fn from_strs(tokens: &[&str], unit: UnitKind) -> Result<Self> {
        Self::new(tokens.iter().map(|t| (*t).to_owned()).collect(), unit)
    }

    /// Re-tokenize rendered text.
    pub fn parse(text: &str, unit: UnitKind) -> Result<Self> {
        Self::new(unit.split(text), unit)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn unit(&self) -> UnitKind {
        self.unit
    }

    /// Number of units, the `|y|` of the acceptance ratio.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// The first `i` units, `y_{<i}`.
    pub fn prefix(&self, i: usize) -> &[String] {
        &self.tokens[..i.min(self.tokens.len())]
    }
}

impl fmt::Display for Sequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

/// Deterministic rendering of a sequence's units.
pub fn render(seq: &Sequence) -> String {
    seq.text.clone()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSequence {
    pub seq: Sequence,
    pub reward: f64,
    /// Natural-log base-model probability; only enumerable backends provide it.
    pub logprob_base: Option<f64>,
}

impl ScoredSequence {
    pub fn new(seq: Sequence, reward: f64) -> Result<Self> {
        if !reward.is_finite() {
            return Err(Error::NonFiniteReward(reward));
        }
        Ok(Self {
            seq,
            reward,
            logprob_base: None,
        })
    }

    pub fn with_logprob(mut self, logprob: f64) -> Self {
        self.logprob_base = Some(logprob);
        self
    }

    pub fn text(&self) -> &str {
        self.seq.text()
    }

    pub fn len(&self) -> usize {
        self.seq.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Inverse temperature of the reward tilt. Strictly positive and finite.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct BetaParam(f64);

impl BetaParam {
    pub fn new(beta: f64) -> Result<Self> {
        if beta.is_finite() && beta > 0.0 {
            Ok(Self(beta))
        } else {
            Err(Error::InvalidArgument(format!(
                "beta must be positive and finite, got {beta}"
            )))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for BetaParam {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<BetaParam> for f64 {
    fn from(b: BetaParam) -> f64 {
        b.0
    }
}

/// One Metropolis-Hastings step.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainRecord {
    pub step: usize,
    /// `y^t` after the accept/reject decision of this step.
    pub state: ScoredSequence,
    pub proposal: Option<ScoredSequence>,
    pub cut_index: Option<usize>,
    pub alpha: f64,
    pub accepted: bool,
    pub tokens_generated: usize,
}

#[derive(Serialize, Deserialize)]
struct WireState {
    text: String,
    reward: f64,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct WireRecord {
    step: usize,
    state: WireState,
    proposal: Option<WireState>,
    cut_index: Option<usize>,
    alpha: f64,
    accepted: bool,
    tokens_generated: usize,
}

impl WireState {
    fn from_scored(s: &ScoredSequence) -> Self {
        Self {
            text: s.text().to_owned(),
            reward: s.reward,
            len: s.len(),
        }
    }

    fn into_scored(self, unit: UnitKind) -> Result<ScoredSequence> {
        let seq = Sequence::parse(&self.text, unit)?;
        if seq.len() != self.len {
            return Err(Error::InvalidArgument(format!(
                "record length {} does not match {} units in `{}`",
                self.len,
                seq.len(),
                self.text
            )));
        }
        ScoredSequence::new(seq, self.reward)
    }
}

impl ChainRecord {
    /// The initial state `y^0`: no proposal, accepted by convention.
    pub fn initial(state: ScoredSequence, tokens_generated: usize) -> Self {
        Self {
            step: 0,
            state,
            proposal: None,
            cut_index: None,
            alpha: 1.0,
            accepted: true,
            tokens_generated,
        }
    }

    /// One JSON object, no trailing newline.
    pub fn to_json_line(&self) -> String {
        let wire = WireRecord {
            step: self.step,
            state: WireState::from_scored(&self.state),
            proposal: self.proposal.as_ref().map(WireState::from_scored),
            cut_index: self.cut_index,
            alpha: self.alpha,
            accepted: self.accepted,
            tokens_generated: self.tokens_generated,
        };
        serde_json::to_string(&wire).expect("record serialization is infallible")
    }

    pub fn from_json_line(line: &str, unit: UnitKind) -> Result<Self> {
        let wire: WireRecord = serde_json::from_str(line)?;
        if !(0.0..=1.0).contains(&wire.alpha) {
            return Err(Error::InvalidArgument(format!("alpha {} outside [0,1]", wire.alpha)));
        }
        Ok(Self {
            step: wire.step,
            state: wire.state.into_scored(unit)?,
            proposal: wire.proposal.map(|p| p.into_scored(unit)).transpose()?,
            cut_index: wire.cut_index,
            alpha: wire.alpha,
            accepted: wire.accepted,
            tokens_generated: wire.tokens_generated,
        })
    }
}

/// Two-component Normal mixture over rewards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureFit {
    pub weights: [f64; 2],
    pub means: [f64; 2],
    pub sigmas: [f64; 2],
    /// 0-based index of the heavier-tailed component.
    pub dominant: usize,
}

impl MixtureFit {
    pub fn new(weights: [f64; 2], means: [f64; 2], sigmas: [f64; 2]) -> Result<Self> {
        let wsum = weights[0] + weights[1];
        if (wsum - 1.0).abs() > 1e-9 || weights.iter().any(|w| !(*w > 0.0 && *w < 1.0)) {
            return Err(Error::InvalidArgument(format!(
                "mixture weights {weights:?} must lie in (0,1) and sum to 1"
            )));
        }
        if sigmas.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidArgument(format!("sigmas {sigmas:?} must be positive")));
        }
        Ok(Self {
            weights,
            means,
            sigmas,
            dominant: dominant_index(means, sigmas),
        })
    }

    /// Single dominant component with all mass, approximated by weight `1 - 1e-12`
    /// on the first slot. Convenient for closed-form checks.
    pub fn single(mean: f64, sigma: f64) -> Result<Self> {
        let tiny = 1e-12;
        Self::new([1.0 - tiny, tiny], [mean, mean], [sigma, sigma * 0.5])
    }

    pub fn dominant_weight(&self) -> f64 {
        self.weights[self.dominant]
    }
    pub fn dominant_mean(&self) -> f64 {
        self.means[self.dominant]
    }
    pub fn dominant_sigma(&self) -> f64 {
        self.sigmas[self.dominant]
    }

    pub fn log_density(&self, r: f64) -> f64 {
        let terms = [0, 1].map(|i| {
            self.weights[i].ln() + crate::analysis::normal_log_pdf(r, self.means[i], self.sigmas[i])
        });
        crate::analysis::logsumexp(&terms)
    }
}

/// Largest variance wins; equal variances fall back to the larger mean.
fn dominant_index(means: [f64; 2], sigmas: [f64; 2]) -> usize {
    let (v0, v1) = (sigmas[0] * sigmas[0], sigmas[1] * sigmas[1]);
    if v1 > v0 || (v1 == v0 && means[1] > means[0]) {
        1
    } else {
        0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetPoint {
    pub flops: f64,
    pub tokens: u64,
    pub metric: f64,
}

/// Compute-vs-metric curve for one method. Flops strictly increase along the points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetCurve {
    pub method_label: String,
    points: Vec<BudgetPoint>,
}

impl BudgetCurve {
    pub fn new(method_label: impl Into<String>) -> Self {
        Self {
            method_label: method_label.into(),
            points: Vec::new(),
        }
    }

    pub fn push(&mut self, point: BudgetPoint) -> Result<()> {
        if !(0.0..=1.0).contains(&point.metric) {
            return Err(Error::InvalidArgument(format!("metric {} outside [0,1]", point.metric)));
        }
        if let Some(last) = self.points.last() {
            if point.flops <= last.flops {
                return Err(Error::InvalidArgument(format!(
                    "flops must strictly increase ({} after {})",
                    point.flops, last.flops
                )));
            }
        }
        self.points.push(point);
        Ok(())
    }

    pub fn points(&self) -> &[BudgetPoint] {
        &self.points
    }
}
