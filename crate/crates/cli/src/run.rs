//! `run` and `replay`: persist chains or sample batches per prompt and write a
//! decision report at every budget point.
//!
//! Layout of `runs/<run_id>/`:
//!
//! ```text
//! run.json                      config, unit, totals
//! prompts.jsonl                 the prompts as sent, with gold answers
//! <prompt_id>/chain_<k>.jsonl   qalign chain records
//! <prompt_id>/chain_<k>.ledger.jsonl
//! <prompt_id>/samples.jsonl     bon / mv / wmv samples
//! <prompt_id>/decisions.jsonl   one line per budget point
//! ```

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use qalign_core::backends::{CachedReward, GenerationBackend};
use qalign_core::decision::{argmax_reward, extract_answer, is_weights, mbr_select, DecisionReport};
use qalign_core::rng::{derive_seed, step_rng};
use qalign_core::sampler::{qalign_chain_from, ChainFiles, LedgerLine, QAlignConfig};
use qalign_core::{ChainRecord, Prompt, Sequence, UnitKind};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Method, RunConfig};
use crate::templates::load_prompts;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub generated_tokens: u64,
    pub scored_tokens: u64,
    pub flops: f64,
}

/// Contents of `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub run_id: String,
    pub method: Method,
    pub unit: UnitKind,
    pub gen_params: u64,
    pub rm_params: u64,
    pub prompt_ids: Vec<String>,
    pub config: RunConfig,
    pub totals: Option<Totals>,
}

/// One independent sample as persisted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleLine {
    pub index: usize,
    pub text: String,
    pub reward: Option<f64>,
    pub tokens_generated: usize,
    pub scored_tokens: usize,
}

/// One line of `decisions.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionLine {
    pub budget: usize,
    pub generated_tokens: u64,
    pub scored_tokens: u64,
    pub flops: f64,
    pub report: DecisionReport,
}

pub fn run_dir(out_root: &Path, run_id: &str) -> PathBuf {
    out_root.join(run_id)
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut s = String::new();
    for it in items {
        s.push_str(&serde_json::to_string(it)?);
        s.push('\n');
    }
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?);
    }
    Ok(out)
}

pub fn read_meta(dir: &Path) -> Result<RunMeta> {
    let p = dir.join("run.json");
    let text = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
    Ok(serde_json::from_str(&text)?)
}

fn write_meta(dir: &Path, meta: &RunMeta) -> Result<()> {
    let mut s = serde_json::to_string_pretty(meta)?;
    s.push('\n');
    fs::write(dir.join("run.json"), s)?;
    Ok(())
}

/// What a prompt's decisions are computed from.
enum Evidence {
    /// Per chain: records and cumulative ledger lines, one per state.
    Chains(Vec<(Vec<ChainRecord>, Vec<LedgerLine>)>),
    Samples(Vec<SampleLine>),
}

fn flops(meta: &RunMeta, generated: u64, scored: u64) -> f64 {
    2.0 * meta.gen_params as f64 * generated as f64 + 2.0 * meta.rm_params as f64 * scored as f64
}

/// Decision at every budget point. A budget of `k` uses only the first `k`
/// states of each chain, or the first `k` samples.
fn decide(meta: &RunMeta, prompt: &Prompt, evidence: &Evidence) -> Result<Vec<DecisionLine>> {
    let cfg = &meta.config;
    let mut out = Vec::new();
    for &k in &cfg.budget_schedule {
        let (seqs, rewards, generated, scored): (Vec<Sequence>, Vec<Option<f64>>, u64, u64) = match evidence {
            Evidence::Chains(chains) => {
                let mut seqs = Vec::new();
                let mut rewards = Vec::new();
                let (mut g, mut s) = (0, 0);
                for (records, ledger) in chains {
                    ensure!(records.len() >= k && ledger.len() >= k, "prompt {}: chain shorter than budget {k}", prompt.id);
                    for r in &records[..k] {
                        seqs.push(r.state.seq.clone());
                        rewards.push(Some(r.state.reward));
                    }
                    g += ledger[k - 1].generated_tokens;
                    s += ledger[k - 1].scored_tokens;
                }
                (seqs, rewards, g, s)
            }
            Evidence::Samples(samples) => {
                ensure!(samples.len() >= k, "prompt {}: {} samples, budget {k}", prompt.id, samples.len());
                let head = &samples[..k];
                let seqs = head
                    .iter()
                    .map(|l| Sequence::parse(&l.text, meta.unit))
                    .collect::<qalign_core::Result<Vec<_>>>()?;
                (
                    seqs,
                    head.iter().map(|l| l.reward).collect(),
                    head.iter().map(|l| l.tokens_generated as u64).sum(),
                    head.iter().map(|l| l.scored_tokens as u64).sum(),
                )
            }
        };
        let rewards_of = || -> Result<Vec<f64>> {
            rewards
                .iter()
                .map(|r| r.with_context(|| format!("prompt {}: sample without reward", prompt.id)))
                .collect()
        };
        let (index, expected_utility, weights_entropy) = match cfg.method {
            Method::Qalign | Method::Mv => {
                let s = mbr_select(&seqs, None, cfg.utility, cfg.extractor)?;
                (s.index, Some(s.expected_utility), None)
            }
            Method::Wmv => {
                let w = is_weights(&rewards_of()?, cfg.beta().context("wmv needs beta")?);
                let s = mbr_select(&seqs, Some(&w), cfg.utility, cfg.extractor)?;
                (s.index, Some(s.expected_utility), Some(w.entropy()))
            }
            Method::Bon => (argmax_reward(&rewards_of()?)?, None, None),
        };
        let chosen = &seqs[index];
        out.push(DecisionLine {
            budget: k,
            generated_tokens: generated,
            scored_tokens: scored,
            flops: flops(meta, generated, scored),
            report: DecisionReport {
                method: cfg.method.label().to_owned(),
                n_samples: seqs.len(),
                selected_text: chosen.text().to_owned(),
                selected_answer: extract_answer(cfg.extractor, chosen),
                expected_utility,
                weights_entropy,
            },
        });
    }
    Ok(out)
}

fn run_chains(
    meta: &RunMeta,
    prompt: &Prompt,
    dir: &Path,
    gen: &dyn GenerationBackend,
    rm: &CachedReward,
) -> Result<Evidence> {
    let cfg = &meta.config;
    let full_steps = cfg.steps.expect("validated");
    let mut chains = Vec::new();
    for k in 0..cfg.chains {
        let files = ChainFiles::new(dir, &format!("chain_{k}"));
        let checkpoint = files.load(meta.unit)?;
        let qcfg = QAlignConfig::new(
            cfg.beta().context("qalign needs beta")?,
            full_steps,
            cfg.max_len,
            derive_seed(cfg.seed, &prompt.id, k as u64),
        )?;
        let mut app = files.appender()?;
        let res = qalign_chain_from(&qcfg, prompt, gen, rm, checkpoint, |r, l| app.append(r, l))
            .with_context(|| format!("prompt {} chain {k} (resumable from its last record)", prompt.id))?;
        chains.push((res.records, files.read_ledger()?));
    }
    Ok(Evidence::Chains(chains))
}

fn run_samples(
    meta: &RunMeta,
    prompt: &Prompt,
    dir: &Path,
    gen: &dyn GenerationBackend,
    rm: Option<&CachedReward>,
) -> Result<Evidence> {
    let cfg = &meta.config;
    let n = cfg.n.expect("validated");
    let path = dir.join("samples.jsonl");
    let mut lines: Vec<SampleLine> = if path.exists() { read_jsonl(&path)? } else { Vec::new() };
    lines.truncate(n);
    for (i, l) in lines.iter().enumerate() {
        ensure!(l.index == i, "{}: sample {i} has index {}", path.display(), l.index);
        if let (Some(rm), Some(r)) = (rm, l.reward) {
            rm.remember(prompt, &Sequence::parse(&l.text, meta.unit)?, r);
        }
    }
    write_jsonl(&path, &lines)?;
    let mut file = OpenOptions::new().append(true).open(&path)?;
    let seed = derive_seed(cfg.seed, &prompt.id, 0);
    for i in lines.len()..n {
        let mut rng = step_rng(seed, i as u64);
        let c = gen
            .complete(prompt, &[], cfg.max_len, &mut rng)
            .with_context(|| format!("prompt {}: sample {i} of {n} (resumable)", prompt.id))?;
        let (reward, scored_tokens) = match rm {
            Some(rm) => (Some(rm.score(prompt, &c.seq)?.0), c.seq.len()),
            None => (None, 0),
        };
        let line = SampleLine {
            index: i,
            text: c.seq.text().to_owned(),
            reward,
            tokens_generated: c.tokens_generated,
            scored_tokens,
        };
        writeln!(file, "{}", serde_json::to_string(&line)?)?;
        lines.push(line);
    }
    Ok(Evidence::Samples(lines))
}

fn load_evidence(meta: &RunMeta, dir: &Path) -> Result<Evidence> {
    if meta.method == Method::Qalign {
        let mut chains = Vec::new();
        for k in 0..meta.config.chains {
            let files = ChainFiles::new(dir, &format!("chain_{k}"));
            ensure!(files.records.exists(), "missing {}", files.records.display());
            let records = read_jsonl_raw(&files.records)?
                .iter()
                .map(|l| ChainRecord::from_json_line(l, meta.unit))
                .collect::<qalign_core::Result<Vec<_>>>()?;
            chains.push((records, files.read_ledger()?));
        }
        Ok(Evidence::Chains(chains))
    } else {
        Ok(Evidence::Samples(read_jsonl(&dir.join("samples.jsonl"))?))
    }
}

fn read_jsonl_raw(path: &Path) -> Result<Vec<String>> {
    Ok(fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(str::to_owned)
        .collect())
}

fn totals_of(meta: &RunMeta, evidence: &Evidence) -> Totals {
    let (g, s) = match evidence {
        Evidence::Chains(chains) => chains.iter().fold((0, 0), |(g, s), (_, l)| {
            let last = l.last();
            (g + last.map_or(0, |x| x.generated_tokens), s + last.map_or(0, |x| x.scored_tokens))
        }),
        Evidence::Samples(lines) => (
            lines.iter().map(|l| l.tokens_generated as u64).sum(),
            lines.iter().map(|l| l.scored_tokens as u64).sum(),
        ),
    };
    Totals { generated_tokens: g, scored_tokens: s, flops: flops(meta, g, s) }
}

/// Execute (or resume) a run. Returns the run directory.
pub fn cmd_run(cfg: &RunConfig, out_root: &Path) -> Result<PathBuf> {
    let prompts = load_prompts(&cfg.prompts, cfg.template_id.as_deref())?;
    let gen = cfg.generator.generator()?;
    let reward = match (&cfg.reward, cfg.method.needs_reward()) {
        (Some(spec), true) => Some(CachedReward::new(spec.reward(cfg.extractor)?)),
        _ => None,
    };
    let meta = RunMeta {
        run_id: cfg.run_id.clone(),
        method: cfg.method,
        unit: gen.capabilities().unit_kind,
        gen_params: gen.capabilities().param_count,
        rm_params: reward.as_ref().map_or(0, CachedReward::param_count),
        prompt_ids: prompts.iter().map(|p| p.id.clone()).collect(),
        config: cfg.clone(),
        totals: None,
    };
    let dir = run_dir(out_root, &cfg.run_id);
    if dir.join("run.json").exists() {
        let old = read_meta(&dir)?;
        if (RunMeta { totals: None, ..old.clone() }) != meta {
            bail!(
                "resume conflict: {} was created by a different config; pick a new run_id or remove it",
                dir.display()
            );
        }
    }
    fs::create_dir_all(&dir)?;
    write_meta(&dir, &meta)?;
    write_jsonl(&dir.join("prompts.jsonl"), &prompts)?;

    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build()?;
    let results: Vec<Result<Totals>> = pool.install(|| {
        prompts
            .par_iter()
            .map(|p| -> Result<Totals> {
                let pdir = dir.join(&p.id);
                fs::create_dir_all(&pdir)?;
                let evidence = match cfg.method {
                    Method::Qalign => run_chains(&meta, p, &pdir, gen.as_ref(), reward.as_ref().expect("validated"))?,
                    _ => run_samples(&meta, p, &pdir, gen.as_ref(), reward.as_ref())?,
                };
                write_jsonl(&pdir.join("decisions.jsonl"), &decide(&meta, p, &evidence)?)?;
                Ok(totals_of(&meta, &evidence))
            })
            .collect()
    });
    let mut totals = Totals { generated_tokens: 0, scored_tokens: 0, flops: 0.0 };
    let mut failures = Vec::new();
    for (p, r) in prompts.iter().zip(results) {
        match r {
            Ok(t) => {
                totals.generated_tokens += t.generated_tokens;
                totals.scored_tokens += t.scored_tokens;
            }
            Err(e) => failures.push(format!("{}: {e:#}", p.id)),
        }
    }
    if !failures.is_empty() {
        bail!("{} of {} prompts failed:\n{}", failures.len(), prompts.len(), failures.join("\n"));
    }
    totals.flops = flops(&meta, totals.generated_tokens, totals.scored_tokens);
    write_meta(&dir, &RunMeta { totals: Some(totals), ..meta })?;
    Ok(dir)
}

/// Recompute every decision report from persisted chains or samples and
/// compare with the stored reports byte for byte. Returns the prompt ids
/// whose reports differ.
pub fn cmd_replay(dir: &Path) -> Result<Vec<String>> {
    let meta = read_meta(dir)?;
    let prompts: Vec<Prompt> = read_jsonl(&dir.join("prompts.jsonl"))?;
    let mut mismatched = Vec::new();
    for p in &prompts {
        let pdir = dir.join(&p.id);
        let evidence = load_evidence(&meta, &pdir)?;
        let mut fresh = String::new();
        for line in decide(&meta, p, &evidence)? {
            fresh.push_str(&serde_json::to_string(&line)?);
            fresh.push('\n');
        }
        let stored = fs::read_to_string(pdir.join("decisions.jsonl")).unwrap_or_default();
        if stored != fresh {
            mismatched.push(p.id.clone());
        }
    }
    Ok(mismatched)
}

/// Decisions of a persisted run, per prompt in run order.
pub fn load_decisions(dir: &Path) -> Result<(RunMeta, Vec<Prompt>, Vec<Vec<DecisionLine>>)> {
    let meta = read_meta(dir)?;
    let prompts: Vec<Prompt> = read_jsonl(&dir.join("prompts.jsonl"))?;
    let decisions = prompts
        .iter()
        .map(|p| read_jsonl(&dir.join(&p.id).join("decisions.jsonl")))
        .collect::<Result<Vec<_>>>()?;
    Ok((meta, prompts, decisions))
}

/// Rewards of a run's independent samples, per prompt.
pub fn load_sample_rewards(dir: &Path) -> Result<Vec<(String, Vec<f64>)>> {
    let meta = read_meta(dir)?;
    let mut out = Vec::new();
    for id in &meta.prompt_ids {
        let path = dir.join(id).join("samples.jsonl");
        if !path.exists() {
            continue;
        }
        let lines: Vec<SampleLine> = read_jsonl(&path)?;
        out.push((id.clone(), lines.iter().filter_map(|l| l.reward).collect()));
    }
    Ok(out)
}

/// Chain records of a qalign run, per prompt and chain.
pub fn load_chains(dir: &Path) -> Result<(RunMeta, Vec<(String, Vec<Vec<ChainRecord>>)>)> {
    let meta = read_meta(dir)?;
    ensure!(meta.method == Method::Qalign, "{} is not a qalign run", dir.display());
    let mut out = Vec::new();
    for id in &meta.prompt_ids {
        match load_evidence(&meta, &dir.join(id))? {
            Evidence::Chains(c) => out.push((id.clone(), c.into_iter().map(|(r, _)| r).collect())),
            Evidence::Samples(_) => unreachable!("qalign runs hold chains"),
        }
    }
    Ok((meta, out))
}
