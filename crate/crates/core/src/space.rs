//! Enumerable toy language models.
//!
//! A space is a finite vocabulary, length bounds, and explicit next-token
//! conditionals (including a stop event). Every sequence probability is exact,
//! so the aligned distribution, the partition function, and the full
//! Metropolis-Hastings transition kernel can be built by brute force.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Sequence, UnitKind};

/// Enumeration is only allowed up to this many vocabulary items.
pub const MAX_ENUM_VOCAB: usize = 4;
/// Enumeration is only allowed up to this length.
pub const MAX_ENUM_LEN: usize = 6;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NextTokenDef {
    /// Distribution over the vocabulary when no prefix override applies.
    /// Uniform when absent.
    #[serde(default)]
    pub default: Option<Vec<f64>>,
    /// Overrides keyed by the rendered prefix ("" for the empty prefix).
    #[serde(default)]
    pub by_prefix: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RewardDef {
    Table {
        table: BTreeMap<String, f64>,
        #[serde(default)]
        default: f64,
    },
    /// `weight × (occurrences of token)`.
    TokenCount { token: String, weight: f64 },
    Constant { value: f64 },
}

impl Default for RewardDef {
    fn default() -> Self {
        RewardDef::Constant { value: 0.0 }
    }
}

/// On-disk space definition (JSON).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceDef {
    pub vocabulary: Vec<String>,
    #[serde(default = "one")]
    pub min_len: usize,
    pub max_len: usize,
    /// Probability of stopping once `min_len` is reached.
    #[serde(default)]
    pub stop_prob: f64,
    #[serde(default)]
    pub stop_by_prefix: BTreeMap<String, f64>,
    #[serde(default)]
    pub next_token: NextTokenDef,
    #[serde(default)]
    pub reward: RewardDef,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone)]
pub struct EnumerableSpace {
    def: SpaceDef,
    temperature: f64,
}

/// Next-unit law at a prefix: probability per vocabulary item plus stop.
#[derive(Debug, Clone, PartialEq)]
pub struct NextDist {
    pub tokens: Vec<f64>,
    pub stop: f64,
}

impl EnumerableSpace {
    pub fn new(def: SpaceDef) -> Result<Self> {
        let v = def.vocabulary.len();
        if v == 0 {
            return Err(Error::InvalidArgument("empty vocabulary".into()));
        }
        if def.vocabulary.iter().any(|t| t.is_empty() || t.contains(char::is_whitespace)) {
            return Err(Error::InvalidArgument(
                "vocabulary items must be non-empty and contain no whitespace".into(),
            ));
        }
        if def.min_len == 0 || def.min_len > def.max_len {
            return Err(Error::InvalidArgument(format!(
                "need 1 <= min_len <= max_len, got {}..={}",
                def.min_len, def.max_len
            )));
        }
        let check_dist = |d: &[f64], what: &str| -> Result<()> {
            if d.len() != v || d.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                return Err(Error::InvalidArgument(format!("bad distribution for {what}")));
            }
            let s: f64 = d.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::Unnormalized(s));
            }
            Ok(())
        };
        if let Some(d) = &def.next_token.default {
            check_dist(d, "default")?;
        }
        for (k, d) in &def.next_token.by_prefix {
            check_dist(d, k)?;
        }
        let stops = std::iter::once(&def.stop_prob).chain(def.stop_by_prefix.values());
        for s in stops {
            if !(0.0..1.0).contains(s) {
                return Err(Error::InvalidArgument(format!("stop probability {s} outside [0,1)")));
            }
        }
        Ok(Self { def, temperature: 1.0 })
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::new(serde_json::from_str(&text)?)
    }

    /// Same space sampled at temperature `t`: each next-unit law is raised to
    /// `1/t` and renormalized.
    pub fn with_temperature(mut self, t: f64) -> Result<Self> {
        if !(t.is_finite() && t > 0.0) {
            return Err(Error::InvalidArgument(format!("temperature {t} must be positive")));
        }
        self.temperature = t;
        Ok(self)
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn def(&self) -> &SpaceDef {
        &self.def
    }

    pub fn vocab_size(&self) -> usize {
        self.def.vocabulary.len()
    }

    pub fn min_len(&self) -> usize {
        self.def.min_len
    }

    pub fn max_len(&self) -> usize {
        self.def.max_len
    }

    pub fn render_ids(&self, ids: &[usize]) -> String {
        ids.iter()
            .map(|&i| self.def.vocabulary[i].as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn to_sequence(&self, ids: &[usize]) -> Result<Sequence> {
        Sequence::new(
            ids.iter().map(|&i| self.def.vocabulary[i].clone()).collect(),
            UnitKind::BackendToken,
        )
    }

    pub fn token_ids(&self, tokens: &[String]) -> Result<Vec<usize>> {
        tokens
            .iter()
            .map(|t| {
                self.def
                    .vocabulary
                    .iter()
                    .position(|v| v == t)
                    .ok_or_else(|| Error::InvalidArgument(format!("token `{t}` not in vocabulary")))
            })
            .collect()
    }

    /// Untempered next-unit law.
    fn raw_next(&self, prefix: &[usize]) -> NextDist {
        let len = prefix.len();
        let v = self.vocab_size();
        if len >= self.def.max_len {
            return NextDist { tokens: vec![0.0; v], stop: 1.0 };
        }
        let key = self.render_ids(prefix);
        let base = self
            .def
            .next_token
            .by_prefix
            .get(&key)
            .or(self.def.next_token.default.as_ref())
            .cloned()
            .unwrap_or_else(|| vec![1.0 / v as f64; v]);
        if len < self.def.min_len {
            return NextDist { tokens: base, stop: 0.0 };
        }
        let stop = *self.def.stop_by_prefix.get(&key).unwrap_or(&self.def.stop_prob);
        NextDist {
            tokens: base.iter().map(|p| p * (1.0 - stop)).collect(),
            stop,
        }
    }

    pub fn next_dist(&self, prefix: &[usize]) -> NextDist {
        let raw = self.raw_next(prefix);
        if self.temperature == 1.0 || raw.stop == 1.0 {
            return raw;
        }
        let inv = 1.0 / self.temperature;
        let tokens: Vec<f64> = raw.tokens.iter().map(|p| p.powf(inv)).collect();
        let stop = raw.stop.powf(inv);
        let z = tokens.iter().sum::<f64>() + stop;
        NextDist {
            tokens: tokens.iter().map(|p| p / z).collect(),
            stop: stop / z,
        }
    }

    /// `log p(y_{<k})` summed over the prefix units only (no stop term).
    pub fn prefix_log_prob(&self, prefix: &[usize]) -> f64 {
        (0..prefix.len())
            .map(|k| self.next_dist(&prefix[..k]).tokens[prefix[k]].ln())
            .sum()
    }

    /// Full sequence log-probability, including the stop event.
    pub fn log_prob(&self, ids: &[usize]) -> f64 {
        if ids.len() < self.def.min_len || ids.len() > self.def.max_len {
            return f64::NEG_INFINITY;
        }
        self.prefix_log_prob(ids) + self.next_dist(ids).stop.ln()
    }

    /// Probability of continuing `prefix` into exactly `full`, conditioned on
    /// emitting at least one new unit. This is the suffix proposal law.
    pub fn suffix_log_prob(&self, prefix: &[usize], full: &[usize]) -> f64 {
        if full.len() <= prefix.len() || full[..prefix.len()] != *prefix {
            return f64::NEG_INFINITY;
        }
        let continue_mass = 1.0 - self.next_dist(prefix).stop;
        self.log_prob(full) - self.prefix_log_prob(prefix) - continue_mass.ln()
    }

    pub fn reward(&self, ids: &[usize]) -> f64 {
        match &self.def.reward {
            RewardDef::Table { table, default } => {
                *table.get(&self.render_ids(ids)).unwrap_or(default)
            }
            RewardDef::TokenCount { token, weight } => {
                let count = ids
                    .iter()
                    .filter(|&&i| &self.def.vocabulary[i] == token)
                    .count();
                weight * count as f64
            }
            RewardDef::Constant { value } => *value,
        }
    }

    pub fn reward_of_text(&self, text: &str) -> Result<f64> {
        let tokens = UnitKind::BackendToken.split(text);
        Ok(self.reward(&self.token_ids(&tokens)?))
    }

    /// Every sequence with length in `[min_len, max_len]`, shortest first,
    /// lexicographic by vocabulary index within a length.
    pub fn enumerate(&self) -> Result<Vec<Vec<usize>>> {
        if self.vocab_size() > MAX_ENUM_VOCAB || self.def.max_len > MAX_ENUM_LEN {
            return Err(Error::InvalidArgument(format!(
                "space too large to enumerate (vocab {} > {MAX_ENUM_VOCAB} or max_len {} > {MAX_ENUM_LEN})",
                self.vocab_size(),
                self.def.max_len
            )));
        }
        let v = self.vocab_size();
        let mut out = Vec::new();
        for len in self.def.min_len..=self.def.max_len {
            let total = v.pow(len as u32);
            for mut code in 0..total {
                let mut ids = vec![0; len];
                for slot in ids.iter_mut().rev() {
                    *slot = code % v;
                    code /= v;
                }
                out.push(ids);
            }
        }
        Ok(out)
    }

    fn draw<R: Rng + ?Sized>(weights: &[f64], stop: f64, rng: &mut R) -> Option<usize> {
        let total = weights.iter().sum::<f64>() + stop;
        let mut u = rng.gen::<f64>() * total;
        for (i, w) in weights.iter().enumerate() {
            if u < *w {
                return Some(i);
            }
            u -= w;
        }
        if stop > 0.0 {
            None
        } else {
            // rounding fell past the last positive weight
            weights.iter().rposition(|w| *w > 0.0)
        }
    }

    /// Extend `prefix` by at most `max_new` units. With `nonempty`, the first
    /// unit is drawn with the stop event excluded (exact conditioning).
    pub fn sample_continuation<R: Rng + ?Sized>(
        &self,
        prefix: &[usize],
        max_new: usize,
        nonempty: bool,
        rng: &mut R,
    ) -> Vec<usize> {
        let mut ids = prefix.to_vec();
        while ids.len() < self.def.max_len && ids.len() - prefix.len() < max_new {
            let d = self.next_dist(&ids);
            let force = nonempty && ids.len() == prefix.len();
            let stop = if force { 0.0 } else { d.stop };
            match Self::draw(&d.tokens, stop, rng) {
                Some(t) => ids.push(t),
                None => break,
            }
        }
        ids
    }
}

/// Spaces used throughout the test and verification suites.
pub mod presets {
    use super::*;

    /// Two binary units, uniform base: four equiprobable sequences,
    /// reward 1 for `A A` and 0 otherwise.
    pub fn four_sequences() -> EnumerableSpace {
        EnumerableSpace::new(SpaceDef {
            vocabulary: vec!["A".into(), "B".into()],
            min_len: 2,
            max_len: 2,
            stop_prob: 0.0,
            stop_by_prefix: BTreeMap::new(),
            next_token: NextTokenDef::default(),
            reward: RewardDef::Table {
                table: BTreeMap::from([("A A".to_owned(), 1.0)]),
                default: 0.0,
            },
        })
        .expect("preset is valid")
    }

    /// Binary vocabulary, lengths 1 to 4 (30 sequences), non-uniform
    /// conditionals and a varied reward table.
    pub fn binary_upto4() -> EnumerableSpace {
        let mut def = SpaceDef {
            vocabulary: vec!["A".into(), "B".into()],
            min_len: 1,
            max_len: 4,
            stop_prob: 0.3,
            stop_by_prefix: BTreeMap::from([("A B".to_owned(), 0.6), ("B".to_owned(), 0.15)]),
            next_token: NextTokenDef {
                default: Some(vec![0.6, 0.4]),
                by_prefix: BTreeMap::from([
                    ("A".to_owned(), vec![0.3, 0.7]),
                    ("B B".to_owned(), vec![0.8, 0.2]),
                ]),
            },
            reward: RewardDef::default(),
        };
        let space = EnumerableSpace::new(def.clone()).expect("preset is valid");
        let mut table = BTreeMap::new();
        for ids in space.enumerate().expect("small") {
            let text = space.render_ids(&ids);
            let a = ids.iter().filter(|&&i| i == 0).count() as f64;
            let ends_b = f64::from(u8::from(*ids.last().unwrap() == 1));
            let r = 0.4 * a - 0.25 * ids.len() as f64 + 0.6 * ends_b;
            table.insert(text, r);
        }
        def.reward = RewardDef::Table { table, default: 0.0 };
        EnumerableSpace::new(def).expect("preset is valid")
    }

    /// Fixed length `n`, uniform binary units, reward `weight × #A`.
    pub fn fixed_length_binary(n: usize, weight: f64) -> EnumerableSpace {
        EnumerableSpace::new(SpaceDef {
            vocabulary: vec!["A".into(), "B".into()],
            min_len: n,
            max_len: n,
            stop_prob: 0.0,
            stop_by_prefix: BTreeMap::new(),
            next_token: NextTokenDef::default(),
            reward: RewardDef::TokenCount { token: "A".into(), weight },
        })
        .expect("preset is valid")
    }

    /// Digits `1 2 3`, lengths 1 to 3 (39 sequences), with a caller-supplied
    /// reward per sequence in enumeration order.
    pub fn digits_upto3(rewards: impl Fn(usize) -> f64) -> EnumerableSpace {
        let mut def = SpaceDef {
            vocabulary: vec!["1".into(), "2".into(), "3".into()],
            min_len: 1,
            max_len: 3,
            stop_prob: 0.35,
            stop_by_prefix: BTreeMap::new(),
            next_token: NextTokenDef {
                default: Some(vec![0.5, 0.3, 0.2]),
                by_prefix: BTreeMap::new(),
            },
            reward: RewardDef::default(),
        };
        let space = EnumerableSpace::new(def.clone()).expect("preset is valid");
        let table = space
            .enumerate()
            .expect("small")
            .iter()
            .enumerate()
            .map(|(k, ids)| (space.render_ids(ids), rewards(k)))
            .collect();
        def.reward = RewardDef::Table { table, default: 0.0 };
        EnumerableSpace::new(def).expect("preset is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::presets::*;
    use super::*;
    use crate::rng::seeded;

    fn total_prob(space: &EnumerableSpace) -> f64 {
        space.enumerate().unwrap().iter().map(|s| space.log_prob(s).exp()).sum()
    }

    #[test]
    fn presets_normalize() {
        for space in [four_sequences(), binary_upto4(), digits_upto3(|_| 0.0)] {
            assert!((total_prob(&space) - 1.0).abs() < 1e-12);
        }
        assert_eq!(binary_upto4().enumerate().unwrap().len(), 30);
        assert_eq!(four_sequences().enumerate().unwrap().len(), 4);
    }

    #[test]
    fn tempered_space_normalizes() {
        let space = binary_upto4().with_temperature(0.7).unwrap();
        assert!((total_prob(&space) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn suffix_law_normalizes_over_extensions() {
        let space = binary_upto4();
        let all = space.enumerate().unwrap();
        for prefix in all.iter().filter(|s| s.len() < 4) {
            let mass: f64 = all.iter().map(|y| space.suffix_log_prob(prefix, y).exp()).sum();
            assert!((mass - 1.0).abs() < 1e-12, "prefix {prefix:?}: {mass}");
        }
        let mass: f64 = all.iter().map(|y| space.suffix_log_prob(&[], y).exp()).sum();
        assert!((mass - 1.0).abs() < 1e-12);
    }

    #[test]
    fn enumeration_cap() {
        let mut def = four_sequences().def().clone();
        def.max_len = 7;
        assert!(EnumerableSpace::new(def).unwrap().enumerate().is_err());
    }

    #[test]
    fn full_prefix_is_returned_unchanged() {
        let space = four_sequences();
        let mut rng = seeded(1);
        assert_eq!(space.sample_continuation(&[0, 1], 4, true, &mut rng), vec![0, 1]);
    }

    #[test]
    fn nonempty_continuation_never_stops_immediately() {
        let space = binary_upto4();
        let mut rng = seeded(3);
        for _ in 0..2000 {
            let y = space.sample_continuation(&[0], 8, true, &mut rng);
            assert!(y.len() >= 2);
        }
    }

    #[test]
    fn space_json_round_trip() {
        let def = binary_upto4().def().clone();
        let text = serde_json::to_string(&def).unwrap();
        let back: SpaceDef = serde_json::from_str(&text).unwrap();
        assert_eq!(back, def);
    }
}
