//! `verify`: every acceptance criterion on self-contained toy spaces, each
//! checked against an independent oracle (brute-force enumeration, tuple
//! enumeration, closed forms). Reports carry no timings, so two runs print
//! the same bytes.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;
use std::sync::Arc;

use anyhow::{Context, Result};
use qalign_core::analysis::evt::simulate_normalized_max;
use qalign_core::analysis::{
    aligned_reward_mixture, beta_star, bon_max_density, build_kernel, fit_reward_mixture, gumbel_approx, gumbel_cdf,
    kernel_stationarity, ks_statistic, tune_beta, DiscretePmf, TuneOptions,
};
use qalign_core::backends::{CachedReward, EnumerableGenerator, SpaceReward};
use qalign_core::decision::{extract_answer_text, is_weights, mbr_select, AnswerExtractor, ISWeights, Utility};
use qalign_core::rng::{derive_seed, seeded};
use qalign_core::sampler::{acceptance_probability, qalign_chain, AcceptInputs, QAlignConfig};
use qalign_core::space::{presets, EnumerableSpace};
use qalign_core::{BetaParam, MixtureFit, Prompt, Sequence, UnitKind};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::config::RunConfig;
use crate::curve::cmd_curve;
use crate::run::cmd_run;

/// Deliberate defects for checking that the suite notices them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Fault {
    None,
    /// Acceptance uses `|y|/|y^t|` instead of `|y^t|/|y|`.
    FlipLengthRatio,
    /// Weighted vote uses raw `exp(r/beta)` without normalizing.
    UnnormalizedIs,
}

#[derive(Debug, Clone, Serialize)]
pub struct CriterionResult {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    /// Measured quantities, keyed by name.
    pub measured: BTreeMap<String, f64>,
    pub notes: Vec<String>,
}

impl CriterionResult {
    fn new(id: u8, name: &'static str) -> Self {
        Self { id, name, passed: true, measured: BTreeMap::new(), notes: Vec::new() }
    }

    fn record(&mut self, key: impl Into<String>, value: f64) {
        self.measured.insert(key.into(), value);
    }

    /// Record a check; a failed check fails the criterion.
    fn check(&mut self, ok: bool, what: impl Into<String>) {
        if !ok {
            self.passed = false;
            self.notes.push(format!("FAILED: {}", what.into()));
        }
    }

    pub fn line(&self) -> String {
        format!(
            "[{}] criterion {:>2}: {}{}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            if self.notes.is_empty() { String::new() } else { format!(" ({})", self.notes.join("; ")) }
        )
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub fault: Fault,
    pub passed: bool,
    pub criteria: Vec<CriterionResult>,
}

fn alpha_with(fault: Fault) -> impl Fn(AcceptInputs) -> f64 + Copy {
    move |a: AcceptInputs| {
        if fault == Fault::FlipLengthRatio {
            acceptance_probability(AcceptInputs { len_proposal: a.len_current, len_current: a.len_proposal, ..a })
        } else {
            acceptance_probability(a)
        }
    }
}

fn beta(b: f64) -> BetaParam {
    BetaParam::new(b).expect("positive literal")
}

/// `pi(y) ∝ p(y)·exp(r(y)/beta)` by direct enumeration, in enumeration order.
pub fn oracle_target(space: &EnumerableSpace, beta: f64) -> Vec<f64> {
    let all = space.enumerate().expect("small toy space");
    let logw: Vec<f64> = all.iter().map(|ids| space.log_prob(ids) + space.reward(ids) / beta).collect();
    let m = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logw.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = w.iter().sum();
    w.iter().map(|x| x / z).collect()
}

fn toy_spaces() -> [(&'static str, EnumerableSpace); 2] {
    [("four_sequences", presets::four_sequences()), ("binary_upto4", presets::binary_upto4())]
}

pub fn criterion_1(fault: Fault) -> CriterionResult {
    let mut c = CriterionResult::new(1, "exact stationarity and detailed balance of the kernel");
    for (name, space) in toy_spaces() {
        for b in [0.5, 1.0, 2.0] {
            let k = match build_kernel(&space, beta(b), alpha_with(fault)) {
                Ok(k) => k,
                Err(e) => {
                    c.check(false, format!("{name}: {e}"));
                    continue;
                }
            };
            let pi = oracle_target(&space, b);
            let r = kernel_stationarity(&k, &pi);
            c.record(format!("{name}/beta={b}/l1_residual"), r.l1_residual);
            c.record(format!("{name}/beta={b}/detailed_balance_gap"), r.detailed_balance_gap);
            c.check(r.l1_residual < 1e-9, format!("{name} beta={b}: |piK - pi|_1 = {:.3e}", r.l1_residual));
            c.check(r.detailed_balance_gap < 1e-9, format!("{name} beta={b}: detailed balance gap {:.3e}", r.detailed_balance_gap));
            c.check(r.row_sum_error < 1e-12, format!("{name} beta={b}: rows do not sum to 1"));
            c.check(r.min_transition > 0.0, format!("{name} beta={b}: some K(y->y') = 0"));
            c.check(r.min_self_loop > 0.0, format!("{name} beta={b}: some K(y->y) = 0"));
        }
    }
    c
}

fn chain_tv(space: EnumerableSpace, b: f64, steps: usize, seed: u64) -> Result<f64> {
    let pi = oracle_target(&space, b);
    let texts: Vec<String> = space.enumerate()?.iter().map(|ids| space.render_ids(ids)).collect();
    let max_len = space.max_len();
    let space = Arc::new(space);
    let gen = EnumerableGenerator::new(space.clone(), 1);
    let rm = CachedReward::new(Arc::new(SpaceReward::new(space, 1)));
    let p = Prompt::new("toy", "toy")?;
    let chain = qalign_chain(&QAlignConfig::new(beta(b), steps, max_len, seed)?, &p, &gen, &rm)?;
    let states = chain.states();
    let kept = &states[states.len() / 10..];
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for s in kept {
        *counts.entry(s.text()).or_default() += 1;
    }
    let n = kept.len() as f64;
    Ok(0.5 * texts.iter().zip(&pi).map(|(t, p)| (counts.get(t.as_str()).copied().unwrap_or(0) as f64 / n - p).abs()).sum::<f64>())
}

pub fn criterion_2(_fault: Fault) -> CriterionResult {
    let mut c = CriterionResult::new(2, "chain reaches TV < 0.05 within 20,000 steps");
    for (name, space) in toy_spaces() {
        for (k, b) in [0.5, 1.0, 2.0].into_iter().enumerate() {
            match chain_tv(space.clone(), b, 20_000, derive_seed(2, name, k as u64)) {
                Ok(tv) => {
                    c.record(format!("{name}/beta={b}/tv"), tv);
                    c.check(tv < 0.05, format!("{name} beta={b}: TV {tv:.4}"));
                }
                Err(e) => c.check(false, format!("{name}: {e}")),
            }
        }
    }
    c
}

/// Exact answer-class masses under the tilted target, by enumeration.
fn exact_answer_mass(space: &EnumerableSpace, b: f64) -> BTreeMap<String, f64> {
    let pi = oracle_target(space, b);
    let mut mass = BTreeMap::new();
    for (ids, p) in space.enumerate().expect("small").iter().zip(pi) {
        *mass.entry(extract_answer_text(AnswerExtractor::LastNumber, &space.render_ids(ids))).or_insert(0.0) += p;
    }
    mass
}

pub fn criterion_3(fault: Fault) -> CriterionResult {
    const SAMPLES: usize = 100_000;
    const TABLES: usize = 100;
    let mut c = CriterionResult::new(3, "weighted vote matches exact expectations and exact MBR");
    let b = 1.0;
    let base = presets::digits_upto3(|_| 0.0);
    let all = base.enumerate().expect("small");
    let texts: Vec<String> = all.iter().map(|ids| base.render_ids(ids)).collect();
    let index: HashMap<&str, usize> = texts.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();

    // base samples do not depend on the reward table
    let gen = EnumerableGenerator::new(Arc::new(base.clone()), 1);
    let prompt = Prompt::new("toy", "toy").expect("non-empty");
    let batch = match qalign_core::sampler::independent_samples(&prompt, &gen, 1, SAMPLES, 3, 33) {
        Ok(b) => b,
        Err(e) => {
            c.check(false, e.to_string());
            return c;
        }
    };
    let sample_idx: Vec<usize> = batch.samples.iter().map(|s| index[s.text()]).collect();
    let distinct: Vec<Sequence> =
        texts.iter().map(|t| Sequence::parse(t, UnitKind::BackendToken).expect("non-empty")).collect();

    let weights_for = |table: &[f64]| -> ISWeights {
        let rewards: Vec<f64> = sample_idx.iter().map(|&i| table[i]).collect();
        match fault {
            Fault::UnnormalizedIs => ISWeights::from_raw(rewards.iter().map(|r| (r / b).exp()).collect()),
            _ => is_weights(&rewards, beta(b)),
        }
    };
    // sample weights summed per distinct sequence; same expected utilities
    let aggregate = |w: &ISWeights| -> ISWeights {
        let mut agg = vec![0.0; distinct.len()];
        for (&i, w) in sample_idx.iter().zip(w.as_slice()) {
            agg[i] += w;
        }
        ISWeights::from_raw(agg)
    };

    let mut rng = seeded(3);
    let mut agree = 0usize;
    let mut worst = 0.0f64;
    for t in 0..TABLES {
        let table: Vec<f64> = (0..all.len()).map(|_| rng.gen_range(0.0..2.0)).collect();
        let space = presets::digits_upto3(|k| table[k]);
        let exact = exact_answer_mass(&space, b);
        let w = aggregate(&weights_for(&table));
        let eu = qalign_core::decision::expected_utilities(&distinct, &w, Utility::ExactMatch, AnswerExtractor::LastNumber);
        if t == 0 {
            for (seq, u) in distinct.iter().zip(&eu) {
                if w.as_slice()[index[seq.text()]] == 0.0 {
                    continue;
                }
                let a = extract_answer_text(AnswerExtractor::LastNumber, seq.text());
                worst = worst.max((u - exact[&a]).abs());
            }
        }
        let present: Vec<Sequence> = distinct.iter().zip(w.as_slice()).filter(|(_, w)| **w > 0.0).map(|(s, _)| s.clone()).collect();
        let pw = ISWeights::from_raw(w.as_slice().iter().copied().filter(|w| *w > 0.0).collect());
        let sel = mbr_select(&present, Some(&pw), Utility::ExactMatch, AnswerExtractor::LastNumber).expect("non-empty");
        let chosen = extract_answer_text(AnswerExtractor::LastNumber, present[sel.index].text());
        let best = exact.iter().max_by(|a, b| a.1.total_cmp(b.1)).expect("non-empty").0;
        agree += usize::from(&chosen == best);
    }
    c.record("max_abs_error_expected_utility", worst);
    c.record("wmv_agrees_with_exact_mbr", agree as f64);
    c.check(worst <= 0.01, format!("IS estimate off by {worst:.4}"));
    c.check(agree >= 95, format!("WMV matched exact MBR on {agree}/{TABLES} tables"));
    c
}

/// Law of the max of `n` draws by enumerating every `n`-tuple.
fn tuple_max(pmf: &[(f64, f64)], n: u32) -> BTreeMap<u64, f64> {
    let k = pmf.len();
    let mut out: BTreeMap<u64, f64> = BTreeMap::new();
    for code in 0..k.pow(n) {
        let (mut c, mut p, mut m) = (code, 1.0, f64::NEG_INFINITY);
        for _ in 0..n {
            let (v, q) = pmf[c % k];
            c /= k;
            p *= q;
            m = m.max(v);
        }
        *out.entry(m.to_bits()).or_insert(0.0) += p;
    }
    out
}

fn random_pmf(rng: &mut impl Rng, size: usize) -> Vec<(f64, f64)> {
    let raw: Vec<f64> = (0..size).map(|_| rng.gen_range(0.05..1.0)).collect();
    let z: f64 = raw.iter().sum();
    (0..size).map(|i| (i as f64 * 0.5 - 1.0, raw[i] / z)).collect()
}

pub fn criterion_4(_fault: Fault) -> CriterionResult {
    let mut c = CriterionResult::new(4, "best-of-n max density");
    let mut rng = seeded(4);
    let mut worst = 0.0f64;
    for size in 1..=5 {
        for _ in 0..4 {
            let pts = random_pmf(&mut rng, size);
            let pmf = DiscretePmf::new(&pts).expect("normalized");
            for n in 1..=3 {
                let got = bon_max_density(&pmf, n).expect("valid");
                for (bits, p) in tuple_max(&pts, n) {
                    worst = worst.max((got.prob_of(f64::from_bits(bits)) - p).abs());
                }
            }
        }
    }
    c.record("max_abs_error_vs_enumeration", worst);
    c.check(worst <= 1e-12, format!("enumeration mismatch {worst:.3e}"));

    let pts = random_pmf(&mut rng, 5);
    let pmf = DiscretePmf::new(&pts).expect("normalized");
    let cdf: Vec<f64> = pts.iter().scan(0.0, |s, (_, p)| { *s += p; Some(*s) }).collect();
    for n in [4u32, 8] {
        let mut counts = vec![0usize; pts.len()];
        for _ in 0..100_000 {
            let mut m = 0;
            for _ in 0..n {
                let u: f64 = rng.gen();
                m = m.max(cdf.iter().position(|c| u < *c).unwrap_or(pts.len() - 1));
            }
            counts[m] += 1;
        }
        let mc = DiscretePmf::new(&pts.iter().zip(&counts).map(|((v, _), k)| (*v, *k as f64 / 1e5)).collect::<Vec<_>>())
            .expect("normalized");
        let tv = bon_max_density(&pmf, n).expect("valid").tv(&mc);
        c.record(format!("n={n}/tv_vs_monte_carlo"), tv);
        c.check(tv < 0.01, format!("n={n}: TV {tv:.4}"));
    }
    c
}

pub fn criterion_5(_fault: Fault) -> CriterionResult {
    let mut c = CriterionResult::new(5, "Gumbel approximation of the normalized max");
    let mut ks = Vec::new();
    for n in [8u64, 32, 128] {
        let z = simulate_normalized_max(n, 10_000, 50 + n).expect("n large enough");
        let d = ks_statistic(&z, gumbel_cdf);
        c.record(format!("n={n}/ks"), d);
        if n >= 32 {
            c.check(d < 0.05, format!("n={n}: KS {d:.4}"));
        }
        ks.push(d);
    }
    c.check(ks[0] > ks[1] && ks[1] > ks[2], format!("KS not decreasing over n = 8, 32, 128: {ks:.4?}"));
    c
}

fn planted_fits() -> Vec<MixtureFit> {
    let specs = [(0.3, [-1.0, 2.0], [0.5, 1.0]), (0.5, [0.0, 1.0], [1.0, 2.0]), (0.8, [0.0, 3.0], [1.5, 0.5])];
    specs
        .iter()
        .enumerate()
        .map(|(k, (w0, mu, sd))| {
            let mut rng = seeded(60 + k as u64);
            let comps = [Normal::new(mu[0], sd[0]).expect("sd > 0"), Normal::new(mu[1], sd[1]).expect("sd > 0")];
            let xs: Vec<f64> = (0..5_000)
                .map(|_| {
                    let j = usize::from(rng.gen::<f64>() >= *w0);
                    comps[j].sample(&mut rng)
                })
                .collect();
            fit_reward_mixture(&xs).expect("well-separated data")
        })
        .collect()
}

fn sample_fit(fit: &MixtureFit, rng: &mut impl Rng) -> f64 {
    let j = usize::from(rng.gen::<f64>() >= fit.weights[0]);
    fit.means[j] + fit.sigmas[j] * rng.sample::<f64, _>(rand_distr::StandardNormal)
}

pub fn criterion_6(_fault: Fault) -> CriterionResult {
    let mut c = CriterionResult::new(6, "mode matching and the documented variance mismatch");
    let mut worst: f64 = 0.0;
    let mut rng = seeded(6);
    for (k, fit) in planted_fits().iter().enumerate() {
        for n in [100u64, 1_000, 10_000] {
            match (gumbel_approx(fit, n), beta_star(fit, n)) {
                (Ok(g), Ok(b)) => {
                    let mu = fit.dominant_mean();
                    let s2 = fit.dominant_sigma().powi(2);
                    worst = worst.max((s2 / b.get() - (g.location - mu)).abs());
                    worst = worst.max((aligned_reward_mixture(fit, b).dominant_mode() - g.location).abs());
                }
                (Err(e), _) | (_, Err(e)) => c.check(false, format!("fit {k} n={n}: {e}")),
            }
        }
        let s2 = fit.dominant_sigma().powi(2);
        for n in [32usize, 128] {
            let maxes: Vec<f64> = (0..10_000)
                .map(|_| (0..n).map(|_| sample_fit(fit, &mut rng)).fold(f64::NEG_INFINITY, f64::max))
                .collect();
            let m = maxes.iter().sum::<f64>() / maxes.len() as f64;
            let var = maxes.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (maxes.len() - 1) as f64;
            c.record(format!("fit{k}/n={n}/var_max_over_sigma_d2"), var / s2);
            c.check(var < s2, format!("fit {k} n={n}: var(max) {var:.4} >= sigma_d^2 {s2:.4}"));
        }
    }
    c.record("max_mode_matching_error", worst);
    c.check(worst < 1e-9, format!("mode matching off by {worst:.3e}"));
    c
}

pub fn criterion_7(_fault: Fault) -> CriterionResult {
    const CHAINS: usize = 32;
    let mut c = CriterionResult::new(7, "token accounting of chains");
    for n in [16usize, 64] {
        let space = Arc::new(presets::fixed_length_binary(n, 0.1));
        let gen = EnumerableGenerator::new(space.clone(), 1);
        let rm = CachedReward::new(Arc::new(SpaceReward::new(space, 1)));
        let p = Prompt::new("toy", "toy").expect("non-empty");
        for t in [63usize, 255] {
            let mut tokens = 0u64;
            for k in 0..CHAINS {
                let cfg = QAlignConfig::new(beta(1.0), t, n, derive_seed(7, "tokens", (n * 1000 + t * 10 + k) as u64))
                    .expect("valid");
                tokens += qalign_chain(&cfg, &p, &gen, &rm).expect("toy chain").ledger.generated_tokens;
            }
            let mean = tokens as f64 / CHAINS as f64;
            let expected = (t as f64 + 1.0) * n as f64 / 2.0;
            let ratio = mean / expected;
            let vs_independent = mean / ((t as f64 + 1.0) * n as f64);
            c.record(format!("N={n}/T={t}/tokens_over_expected"), ratio);
            c.record(format!("N={n}/T={t}/chain_over_independent"), vs_independent);
            c.check((ratio - 1.0).abs() <= 0.05, format!("N={n} T={t}: tokens / ((T+1)N/2) = {ratio:.4}"));
            c.check((vs_independent / 0.5 - 1.0).abs() <= 0.10, format!("N={n} T={t}: chain/independent = {vs_independent:.4}"));
        }
    }
    c
}

/// Reward weight `c` of `fixed_length_binary(6, c)` that gives an exact
/// stationary acceptance rate of 0.5 at `beta = 1`.
pub fn calibrated_weight() -> Result<f64> {
    let rate = |w: f64| -> Result<f64> {
        let space = presets::fixed_length_binary(6, w);
        let k = build_kernel(&space, beta(1.0), acceptance_probability)?;
        Ok(k.acceptance_rate(&oracle_target(&space, 1.0)))
    };
    let (mut lo, mut hi) = (0.0, 20.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if rate(mid)? > 0.5 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

pub fn criterion_8(_fault: Fault) -> CriterionResult {
    const PILOTS: usize = 32;
    const PILOT_STEPS: usize = 128;
    let mut c = CriterionResult::new(8, "acceptance-rate tuning");
    let outcome = (|| -> Result<()> {
        let w = calibrated_weight()?;
        c.record("reward_weight", w);
        let space = Arc::new(presets::fixed_length_binary(6, w));
        let gen = EnumerableGenerator::new(space.clone(), 1);
        let rm = CachedReward::new(Arc::new(SpaceReward::new(space, 1)));
        let p = Prompt::new("deploy", "toy")?;
        let measured = qalign_chain(&QAlignConfig::new(beta(1.0), 20_000, 6, 81)?, &p, &gen, &rm)?.acceptance_rate;
        c.record("measured_rate_at_beta_1", measured);
        c.check((measured - 0.5).abs() <= 0.03, format!("acceptance at beta=1 is {measured:.4}"));

        let pilots: Vec<Prompt> = (0..PILOTS).map(|i| Prompt::new(format!("pilot{i}"), "toy")).collect::<Result<_, _>>()?;
        let tuned = tune_beta(&pilots, &gen, &rm, &TuneOptions { pilot_steps: PILOT_STEPS, ..TuneOptions::new(6, 82) })?;
        c.record("tuned_beta", tuned.beta);
        c.record("pilot_rate", tuned.rate);
        c.check((0.5..=2.0).contains(&tuned.beta), format!("tuned beta {:.4}", tuned.beta));
        let deployed = qalign_chain(&QAlignConfig::new(beta(tuned.beta), 5_000, 6, 83)?, &p, &gen, &rm)?.acceptance_rate;
        c.record("deployed_rate", deployed);
        c.check((deployed - 0.5).abs() <= 0.07, format!("deployed acceptance {deployed:.4}"));
        Ok(())
    })();
    if let Err(e) = outcome {
        c.check(false, format!("{e:#}"));
    }
    c
}

pub fn criterion_9(fault: Fault) -> CriterionResult {
    let mut c = CriterionResult::new(9, "acceptance rule examples and shift invariance");
    let alpha = alpha_with(fault);
    let a = |rp, rc, lp, lc, b| alpha(AcceptInputs { reward_proposal: rp, reward_current: rc, len_proposal: lp, len_current: lc, beta: b });
    let examples = [
        ("identical", a(0.4, 0.4, 7, 7, 1.0), 1.0),
        ("worse_but_shorter", a(0.2, 0.5, 8, 10, 1.0), ((-0.3f64).exp() * 1.25).min(1.0)),
        ("better_and_longer", a(1.0, 0.0, 20, 10, 0.5), 1.0),
    ];
    for (name, got, want) in examples {
        c.record(format!("{name}/alpha"), got);
        c.check((got - want).abs() < 1e-5, format!("{name}: alpha {got:.6} vs {want:.6}"));
    }
    c.check((examples[1].1 - 0.92602).abs() < 1e-5, "0.92602 example");
    // dyadic rewards and shifts add without rounding, so equality is exact
    let mut rng = seeded(9);
    let mut exact = true;
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let rp = rng.gen_range(-64i32..64) as f64 / 8.0;
        let rc = rng.gen_range(-64i32..64) as f64 / 8.0;
        let shift = rng.gen_range(-32i32..32) as f64;
        let (lp, lc) = (rng.gen_range(1..50), rng.gen_range(1..50));
        let b = [0.25, 0.5, 1.0, 2.0][rng.gen_range(0..4)];
        exact &= a(rp, rc, lp, lc, b) == a(rp + shift, rc + shift, lp, lc, b);
        let (rp, rc, s) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-100.0..100.0));
        worst = worst.max((a(rp, rc, lp, lc, b) - a(rp + s, rc + s, lp, lc, b)).abs());
    }
    c.record("max_shift_deviation_real_rewards", worst);
    c.check(exact, "shift changed alpha on exactly representable rewards");
    c.check(worst < 1e-9, format!("shift changed alpha by {worst:.3e}"));
    c
}

const C10_SPACE: &str = "space.json";

fn c10_config(kind: &str, dir: &Path, method: &str) -> String {
    let (gen, rm) = match kind {
        "record" => (
            format!("kind = \"simulated\"\nspace = \"{C10_SPACE}\"\nrecord = \"gen_{method}.jsonl\""),
            format!("kind = \"simulated\"\nspace = \"{C10_SPACE}\"\nrecord = \"rm_{method}.jsonl\""),
        ),
        _ => (
            format!("kind = \"fixture\"\npath = \"gen_{method}.jsonl\""),
            format!("kind = \"fixture\"\npath = \"rm_{method}.jsonl\""),
        ),
    };
    let sizes = if method == "qalign" { "steps = 63" } else { "n = 64" };
    let _ = dir;
    format!(
        "run_id = \"{method}\"\nmethod = \"{method}\"\nseed = 10\nbeta = 0.5\n{sizes}\nbudget_schedule = [1, 2, 4, 8, 16, 32, 64]\n\
         prompts = \"prompts.jsonl\"\nmax_len = 4\nworkers = 2\n\n[generator]\n{gen}\n\n[reward]\n{rm}\n"
    )
}

fn snapshot(root: &Path) -> Result<BTreeMap<String, Vec<u8>>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d)? {
            let p = e?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root)?.display().to_string(), fs::read(&p)?);
            }
        }
    }
    Ok(out)
}

/// Record fixtures from the simulated endpoint, then run the fixture-backed
/// pipeline (`run` + `curve`) twice and return both output trees.
pub fn fixture_pipeline(work: &Path) -> Result<[BTreeMap<String, Vec<u8>>; 2]> {
    fs::create_dir_all(work)?;
    fs::write(work.join(C10_SPACE), serde_json::to_string_pretty(presets::binary_upto4().def())?)?;
    fs::write(
        work.join("prompts.jsonl"),
        "{\"id\":\"p1\",\"question\":\"Spell a word.\",\"gold\":\"A B\"}\n\
         {\"id\":\"p2\",\"question\":\"Spell another.\",\"gold\":\"B\"}\n\
         {\"id\":\"p3\",\"question\":\"And one more.\",\"gold\":\"A A B\"}\n",
    )?;
    for method in ["qalign", "bon", "wmv"] {
        let cfg_path = work.join(format!("record_{method}.toml"));
        fs::write(&cfg_path, c10_config("record", work, method))?;
        cmd_run(&RunConfig::load(&cfg_path)?, &work.join("recorded"))?;
    }
    let mut trees = Vec::new();
    for pass in 0..2 {
        let out = work.join(format!("pass{pass}"));
        let mut dirs = Vec::new();
        for method in ["qalign", "bon", "wmv"] {
            let cfg_path = work.join(format!("fixture_{method}.toml"));
            fs::write(&cfg_path, c10_config("fixture", work, method))?;
            dirs.push(cmd_run(&RunConfig::load(&cfg_path)?, &out.join("runs"))?);
        }
        cmd_curve(&dirs, None, &out.join("curve"))?;
        trees.push(snapshot(&out)?);
    }
    let [a, b]: [_; 2] = trees.try_into().expect("two passes");
    Ok([a, b])
}

pub fn criterion_10(_fault: Fault) -> CriterionResult {
    let mut c = CriterionResult::new(10, "fixture-backed run and curve are byte-identical across executions");
    let outcome = (|| -> Result<()> {
        let tmp = tempfile::tempdir().context("creating a scratch directory")?;
        let [a, b] = fixture_pipeline(tmp.path())?;
        c.record("files_compared", a.len() as f64);
        c.check(a.len() > 10, "pipeline wrote too few files");
        c.check(a.keys().eq(b.keys()), "different file sets");
        let differing: Vec<&String> = a.iter().filter(|(k, v)| b.get(*k) != Some(v)).map(|(k, _)| k).collect();
        c.check(differing.is_empty(), format!("files differ: {differing:?}"));
        // fixture runs must reproduce the recorded (live) runs exactly
        let recorded = snapshot(&tmp.path().join("recorded"))?;
        let mismatched: Vec<&String> = recorded
            .iter()
            .filter(|(k, v)| k.ends_with("decisions.jsonl") && a.get(&format!("runs/{k}")) != Some(v))
            .map(|(k, _)| k)
            .collect();
        c.check(mismatched.is_empty(), format!("replayed decisions differ from recorded: {mismatched:?}"));
        Ok(())
    })();
    if let Err(e) = outcome {
        c.check(false, format!("{e:#}"));
    }
    c
}

pub type CriterionFn = fn(Fault) -> CriterionResult;

pub const CRITERIA: [CriterionFn; 10] = [
    criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6, criterion_7, criterion_8, criterion_9,
    criterion_10,
];

/// Run the selected criteria (all when `only` is empty).
pub fn run_verify(fault: Fault, only: &[u8], mut on_done: impl FnMut(&CriterionResult)) -> VerifyReport {
    let mut criteria = Vec::new();
    for (i, f) in CRITERIA.iter().enumerate() {
        let id = i as u8 + 1;
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let r = f(fault);
        on_done(&r);
        criteria.push(r);
    }
    VerifyReport { fault, passed: criteria.iter().all(|c| c.passed), criteria }
}
