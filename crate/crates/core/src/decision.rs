//! Decision rules: minimum Bayes risk selection, majority and weighted
//! majority voting, and answer extraction.

use std::collections::HashMap;
use std::sync::OnceLock;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::analysis::logsumexp;
use crate::error::{Error, Result};
use crate::types::{BetaParam, Sequence};

/// Returned by [`extract_answer`] when nothing matches.
pub const NO_ANSWER: &str = "[no-answer]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerExtractor {
    BoxedLatex,
    LastNumber,
    ChoiceLetter,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Utility {
    /// 1 when extracted answers agree, else 0.
    ExactMatch,
    /// Unigram F1 after lowercasing and stripping punctuation.
    Rouge1F1,
}

fn number_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"-?\d[\d,]*(?:\.\d+)?").expect("valid regex"))
}

fn choice_paren_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?:^|[^A-Za-z])\(?([A-Da-d])\)").expect("valid regex"))
}

fn choice_bare_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b([A-D])\b").expect("valid regex"))
}

/// `1,234.500` → `1234.5`; `-0.0` → `0`.
fn normalize_number(raw: &str) -> String {
    let mut s: String = raw.chars().filter(|c| *c != ',').collect();
    if s.contains('.') {
        s = s.trim_end_matches('0').trim_end_matches('.').to_owned();
    }
    if s == "-0" || s.is_empty() {
        s = "0".into();
    }
    s
}

/// Content of the last `\boxed{...}`, with nested braces balanced.
fn last_boxed(text: &str) -> Option<&str> {
    let start = text.rfind("\\boxed{")? + "\\boxed{".len();
    let mut depth = 1usize;
    for (i, c) in text[start..].char_indices() {
        match c {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..start + i]);
                }
            }
            _ => {}
        }
    }
    None
}

/// Normalize a reference answer the same way extracted answers are.
pub fn normalize_answer(extractor: AnswerExtractor, raw: &str) -> String {
    let raw = raw.trim();
    match extractor {
        AnswerExtractor::ChoiceLetter => raw.to_uppercase(),
        AnswerExtractor::Identity => raw.to_owned(),
        AnswerExtractor::BoxedLatex | AnswerExtractor::LastNumber => {
            match number_re().find(raw) {
                Some(m) if m.as_str().len() == raw.len() => normalize_number(raw),
                _ => raw.to_owned(),
            }
        }
    }
}

pub fn extract_answer(extractor: AnswerExtractor, y: &Sequence) -> String {
    extract_answer_text(extractor, y.text())
}

pub fn extract_answer_text(extractor: AnswerExtractor, text: &str) -> String {
    let found = match extractor {
        AnswerExtractor::BoxedLatex => {
            last_boxed(text).map(|inner| normalize_answer(extractor, inner))
        }
        AnswerExtractor::LastNumber => number_re()
            .find_iter(text)
            .last()
            .map(|m| normalize_number(m.as_str())),
        AnswerExtractor::ChoiceLetter => choice_paren_re()
            .captures_iter(text)
            .last()
            .or_else(|| choice_bare_re().captures_iter(text).last())
            .map(|c| c[1].to_uppercase()),
        AnswerExtractor::Identity => Some(text.trim().to_owned()),
    };
    match found {
        Some(a) if !a.is_empty() => a,
        _ => NO_ANSWER.to_owned(),
    }
}

fn rouge_tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect::<String>()
        .split_whitespace()
        .map(str::to_owned)
        .collect()
}

/// ROUGE-1 F1 on unigram multisets.
pub fn rouge1_f1(a: &str, b: &str) -> f64 {
    let (ta, tb) = (rouge_tokens(a), rouge_tokens(b));
    match (ta.is_empty(), tb.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &tb {
        *counts.entry(t.as_str()).or_default() += 1;
    }
    let mut overlap = 0usize;
    for t in &ta {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / ta.len() as f64;
    let r = overlap as f64 / tb.len() as f64;
    2.0 * p * r / (p + r)
}

/// Self-normalized importance weights. Each is `∝ exp(r_i/beta)`; the sum is 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ISWeights(Vec<f64>);

impl ISWeights {
    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        -self.0.iter().filter(|w| **w > 0.0).map(|w| w * w.ln()).sum::<f64>()
    }

    /// Wrap arbitrary weights without normalizing. Used to inject faults in
    /// verification runs.
    pub fn from_raw(weights: Vec<f64>) -> Self {
        Self(weights)
    }
}

pub fn is_weights(rewards: &[f64], beta: BetaParam) -> ISWeights {
    let logits: Vec<f64> = rewards.iter().map(|r| r / beta.get()).collect();
    let lse = logsumexp(&logits);
    ISWeights(logits.iter().map(|l| (l - lse).exp()).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub index: usize,
    pub expected_utility: f64,
}

/// Expected utility of every sample as a hypothesis against the weighted set.
pub fn expected_utilities(
    samples: &[Sequence],
    weights: &ISWeights,
    utility: Utility,
    extractor: AnswerExtractor,
) -> Vec<f64> {
    match utility {
        Utility::ExactMatch => {
            let answers: Vec<String> = samples.iter().map(|s| extract_answer(extractor, s)).collect();
            let mut mass: HashMap<&str, f64> = HashMap::new();
            for (a, w) in answers.iter().zip(weights.as_slice()) {
                *mass.entry(a.as_str()).or_default() += w;
            }
            answers.iter().map(|a| mass[a.as_str()]).collect()
        }
        Utility::Rouge1F1 => samples
            .par_iter()
            .map(|h| {
                samples
                    .iter()
                    .zip(weights.as_slice())
                    .map(|(e, w)| w * rouge1_f1(h.text(), e.text()))
                    .sum()
            })
            .collect(),
    }
}

/// `argmax_{y in S} sum_t w_t u(y, y^t)`, ties to the lowest index. Uniform
/// weights when `weights` is `None`.
pub fn mbr_select(
    samples: &[Sequence],
    weights: Option<&ISWeights>,
    utility: Utility,
    extractor: AnswerExtractor,
) -> Result<Selection> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let uniform;
    let weights = match weights {
        Some(w) if w.len() != samples.len() => {
            return Err(Error::InvalidArgument(format!(
                "{} weights for {} samples",
                w.len(),
                samples.len()
            )))
        }
        Some(w) => w,
        None => {
            uniform = ISWeights::uniform(samples.len());
            &uniform
        }
    };
    let scores = expected_utilities(samples, weights, utility, extractor);
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    Ok(Selection {
        index: best,
        expected_utility: scores[best],
    })
}

/// Highest reward, ties to the earliest index.
pub fn argmax_reward(rewards: &[f64]) -> Result<usize> {
    if rewards.is_empty() {
        return Err(Error::EmptySamples);
    }
    let mut best = 0;
    for (i, r) in rewards.iter().enumerate() {
        if *r > rewards[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Per-budget decision summary written by the harness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionReport {
    pub method: String,
    pub n_samples: usize,
    pub selected_text: String,
    pub selected_answer: String,
    pub expected_utility: Option<f64>,
    pub weights_entropy: Option<f64>,
}
