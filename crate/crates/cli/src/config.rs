//! Run configuration: one TOML file. Secrets come only from the environment.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, ensure, Context, Result};
use qalign_core::backends::{
    ApiGenerator, ApiReward, EnumerableGenerator, ExactMatchReward, GenerationBackend, HttpConfig, HttpTransport,
    Recorder, RecordingTransport, ReplayTransport, RewardBackend, SimulatedEndpoint, SpaceReward, Transport,
};
use qalign_core::decision::{AnswerExtractor, Utility};
use qalign_core::space::EnumerableSpace;
use qalign_core::{BetaParam, UnitKind};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Qalign,
    Bon,
    Mv,
    Wmv,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Qalign => "qalign",
            Method::Bon => "bon",
            Method::Mv => "mv",
            Method::Wmv => "wmv",
        }
    }

    pub fn needs_reward(self) -> bool {
        self != Method::Mv
    }
}

fn one() -> f64 {
    1.0
}
fn one_u64() -> u64 {
    1
}
fn default_model() -> String {
    "toy".into()
}
fn default_timeout() -> u64 {
    60
}
fn default_retries() -> u32 {
    3
}
fn default_unit() -> UnitKind {
    UnitKind::Word
}

/// Where generations and rewards come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendSpec {
    /// In-process enumerable model from a space file.
    Toy {
        space: PathBuf,
        #[serde(default = "one")]
        temperature: f64,
        #[serde(default = "one_u64")]
        param_count: u64,
    },
    /// The HTTP protocol answered in-process from a space file.
    Simulated {
        space: PathBuf,
        #[serde(default = "default_model")]
        model: String,
        #[serde(default = "one")]
        temperature: f64,
        #[serde(default = "one_u64")]
        param_count: u64,
        #[serde(default)]
        record: Option<PathBuf>,
    },
    /// OpenAI-compatible completions plus a `/score` endpoint.
    Http {
        base_url: String,
        #[serde(default = "default_model")]
        model: String,
        /// Name of the environment variable holding the API key.
        #[serde(default)]
        api_key_env: Option<String>,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
        #[serde(default = "default_retries")]
        max_retries: u32,
        #[serde(default)]
        max_requests: Option<usize>,
        #[serde(default = "one")]
        temperature: f64,
        #[serde(default = "default_unit")]
        unit: UnitKind,
        #[serde(default = "one_u64")]
        param_count: u64,
        #[serde(default)]
        record: Option<PathBuf>,
    },
    /// Replay of a recorded JSONL fixture.
    Fixture {
        path: PathBuf,
        #[serde(default = "default_model")]
        model: String,
        #[serde(default = "one")]
        temperature: f64,
        #[serde(default = "default_unit")]
        unit: UnitKind,
        #[serde(default = "one_u64")]
        param_count: u64,
    },
    /// Reward 1 when the extracted answer equals the prompt's gold answer.
    ExactMatch {
        #[serde(default = "one_u64")]
        param_count: u64,
    },
}

fn default_chains() -> usize {
    1
}
fn default_workers() -> usize {
    4
}
fn default_utility() -> Utility {
    Utility::ExactMatch
}
fn default_extractor() -> AnswerExtractor {
    AnswerExtractor::Identity
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run_id: String,
    pub method: Method,
    pub seed: u64,
    #[serde(default)]
    pub beta: Option<f64>,
    /// Chain steps `T` (qalign).
    #[serde(default)]
    pub steps: Option<usize>,
    /// Independent samples (bon, mv, wmv).
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default = "default_chains")]
    pub chains: usize,
    pub budget_schedule: Vec<usize>,
    #[serde(default = "default_utility")]
    pub utility: Utility,
    #[serde(default = "default_extractor")]
    pub extractor: AnswerExtractor,
    pub prompts: PathBuf,
    #[serde(default)]
    pub template_id: Option<String>,
    pub max_len: usize,
    #[serde(default = "default_workers")]
    pub workers: usize,
    pub generator: BackendSpec,
    #[serde(default)]
    pub reward: Option<BackendSpec>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).context("parsing run config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Load and resolve relative paths against the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg = Self::from_toml(&text).with_context(|| format!("in {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.prompts);
        for spec in [Some(&mut self.generator), self.reward.as_mut()].into_iter().flatten() {
            match spec {
                BackendSpec::Toy { space, .. } => fix(space),
                BackendSpec::Simulated { space, record, .. } => {
                    fix(space);
                    if let Some(r) = record {
                        fix(r);
                    }
                }
                BackendSpec::Http { record: Some(r), .. } => fix(r),
                BackendSpec::Fixture { path, .. } => fix(path),
                _ => {}
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            !self.run_id.is_empty() && !self.run_id.contains(['/', '\\']) && self.run_id != "." && self.run_id != "..",
            "run_id {:?} cannot name a directory",
            self.run_id
        );
        ensure!(!self.budget_schedule.is_empty(), "budget_schedule is empty");
        ensure!(self.budget_schedule[0] >= 1, "budget_schedule entries must be at least 1");
        for w in self.budget_schedule.windows(2) {
            ensure!(w[0] < w[1], "budget_schedule must be strictly increasing ({} then {})", w[0], w[1]);
        }
        ensure!(self.max_len >= 1, "max_len must be at least 1");
        ensure!(self.workers >= 1, "workers must be at least 1");
        ensure!(self.chains >= 1, "chains must be at least 1");
        let last = *self.budget_schedule.last().expect("non-empty");
        match self.method {
            Method::Qalign => {
                let steps = self.steps.context("method qalign requires steps")?;
                ensure!(steps >= 1, "steps must be at least 1");
                ensure!(
                    last <= steps + 1,
                    "budget {last} exceeds the {} states of a {steps}-step chain",
                    steps + 1
                );
            }
            m => {
                let n = self.n.with_context(|| format!("method {} requires n", m.label()))?;
                ensure!(last <= n, "budget {last} exceeds n = {n}");
                ensure!(self.chains == 1, "chains applies to qalign only");
            }
        }
        if matches!(self.method, Method::Qalign | Method::Wmv) {
            let b = self.beta.with_context(|| format!("method {} requires beta", self.method.label()))?;
            BetaParam::new(b)?;
        }
        if self.method.needs_reward() {
            ensure!(self.reward.is_some(), "method {} requires a [reward] backend", self.method.label());
        }
        if let Some(t) = &self.template_id {
            crate::templates::template(t)?;
        }
        if matches!(self.generator, BackendSpec::ExactMatch { .. }) {
            bail!("exact_match is a reward backend, not a generator");
        }
        for spec in [Some(&self.generator), self.reward.as_ref()].into_iter().flatten() {
            if let Some(t) = spec.temperature() {
                ensure!(t.is_finite() && t > 0.0, "temperature {t} must be positive");
            }
        }
        Ok(())
    }

    pub fn beta(&self) -> Option<BetaParam> {
        self.beta.and_then(|b| BetaParam::new(b).ok())
    }

    /// Largest budget; the run produces exactly this many states or samples.
    pub fn max_budget(&self) -> usize {
        *self.budget_schedule.last().expect("validated")
    }
}

impl BackendSpec {
    pub fn temperature(&self) -> Option<f64> {
        match self {
            BackendSpec::Toy { temperature, .. }
            | BackendSpec::Simulated { temperature, .. }
            | BackendSpec::Http { temperature, .. }
            | BackendSpec::Fixture { temperature, .. } => Some(*temperature),
            BackendSpec::ExactMatch { .. } => None,
        }
    }

    fn param_count(&self) -> u64 {
        match self {
            BackendSpec::Toy { param_count, .. }
            | BackendSpec::Simulated { param_count, .. }
            | BackendSpec::Http { param_count, .. }
            | BackendSpec::Fixture { param_count, .. }
            | BackendSpec::ExactMatch { param_count } => *param_count,
        }
    }

    fn space(path: &Path, temperature: f64) -> Result<Arc<EnumerableSpace>> {
        let s = EnumerableSpace::from_json_file(path).with_context(|| format!("loading space {}", path.display()))?;
        Ok(Arc::new(if temperature == 1.0 { s } else { s.with_temperature(temperature)? }))
    }

    fn transport(&self) -> Result<(Arc<dyn Transport>, String, f64, UnitKind)> {
        Ok(match self {
            BackendSpec::Simulated { space, model, temperature, record, .. } => {
                let sim: Arc<dyn Transport> = Arc::new(SimulatedEndpoint::new(Self::space(space, *temperature)?));
                let t = match record {
                    Some(r) => Arc::new(RecordingTransport::new(sim, Recorder::create(r)?)) as Arc<dyn Transport>,
                    None => sim,
                };
                (t, model.clone(), *temperature, UnitKind::Word)
            }
            BackendSpec::Http {
                base_url,
                model,
                api_key_env,
                timeout_secs,
                max_retries,
                max_requests,
                temperature,
                unit,
                record,
                ..
            } => {
                let mut cfg = HttpConfig::new(base_url.clone());
                cfg.timeout = Duration::from_secs(*timeout_secs);
                cfg.max_retries = *max_retries;
                cfg.max_requests = *max_requests;
                if let Some(var) = api_key_env {
                    cfg.api_key =
                        Some(std::env::var(var).with_context(|| format!("environment variable {var} is not set"))?);
                }
                let mut t = HttpTransport::new(cfg);
                if let Some(r) = record {
                    t = t.with_recorder(Recorder::create(r)?);
                }
                (Arc::new(t), model.clone(), *temperature, *unit)
            }
            BackendSpec::Fixture { path, model, temperature, unit, .. } => {
                let t = ReplayTransport::from_jsonl(path).with_context(|| format!("loading fixture {}", path.display()))?;
                (Arc::new(t), model.clone(), *temperature, *unit)
            }
            _ => bail!("backend has no transport"),
        })
    }

    pub fn generator(&self) -> Result<Arc<dyn GenerationBackend>> {
        Ok(match self {
            BackendSpec::Toy { space, temperature, param_count } => {
                Arc::new(EnumerableGenerator::new(Self::space(space, *temperature)?, *param_count))
            }
            BackendSpec::ExactMatch { .. } => bail!("exact_match cannot generate"),
            _ => {
                let (t, model, temp, unit) = self.transport()?;
                Arc::new(ApiGenerator::new(t, model, temp, unit, self.param_count())?)
            }
        })
    }

    pub fn reward(&self, extractor: AnswerExtractor) -> Result<Arc<dyn RewardBackend>> {
        Ok(match self {
            BackendSpec::Toy { space, param_count, .. } => Arc::new(SpaceReward::new(Self::space(space, 1.0)?, *param_count)),
            BackendSpec::ExactMatch { param_count } => Arc::new(ExactMatchReward::new(extractor, *param_count)),
            _ => Arc::new(ApiReward::new(self.transport()?.0, self.param_count())),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
run_id = "t"
method = "qalign"
seed = 1
beta = 1.0
steps = 15
budget_schedule = [1, 2, 4, 8, 16]
prompts = "prompts.jsonl"
max_len = 4

[generator]
kind = "toy"
space = "space.json"

[reward]
kind = "toy"
space = "space.json"
"#;

    #[test]
    fn parses_and_resolves() {
        let mut c = RunConfig::from_toml(BASE).unwrap();
        assert_eq!(c.method, Method::Qalign);
        assert_eq!(c.extractor, AnswerExtractor::Identity);
        c.resolve_paths(Path::new("/cfg"));
        assert_eq!(c.prompts, PathBuf::from("/cfg/prompts.jsonl"));
        assert!(matches!(&c.generator, BackendSpec::Toy { space, .. } if space == Path::new("/cfg/space.json")));
    }

    #[test]
    fn rejects_bad_configs() {
        let bad = [
            BASE.replace("[1, 2, 4, 8, 16]", "[1, 4, 2]"),
            BASE.replace("[1, 2, 4, 8, 16]", "[1, 2, 32]"),
            BASE.replace("beta = 1.0\n", ""),
            BASE.replace("beta = 1.0", "beta = -1.0"),
            BASE.replace("steps = 15\n", ""),
            BASE.replace("method = \"qalign\"", "method = \"bon\"").replace("steps = 15", "n = 16").replace(
                "[reward]\nkind = \"toy\"\nspace = \"space.json\"\n",
                "",
            ),
            BASE.replace("kind = \"toy\"\nspace = \"space.json\"\n\n[reward]", "kind = \"toy\"\nspace = \"space.json\"\ntemperature = 0.0\n\n[reward]"),
            BASE.replace("run_id = \"t\"", "run_id = \"../x\""),
            BASE.replace("seed = 1", "seed = 1\nunknown = 2"),
        ];
        for b in bad {
            assert!(RunConfig::from_toml(&b).is_err(), "{b}");
        }
    }

    #[test]
    fn mv_needs_no_reward_or_beta() {
        let mv = BASE
            .replace("method = \"qalign\"", "method = \"mv\"")
            .replace("steps = 15", "n = 16")
            .replace("beta = 1.0\n", "")
            .replace("[reward]\nkind = \"toy\"\nspace = \"space.json\"\n", "");
        RunConfig::from_toml(&mv).unwrap();
    }
}
