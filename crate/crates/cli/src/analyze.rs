//! `analyze`: reward mixture fits, the Gumbel / beta* table, histograms, and
//! TV-vs-steps for chains on enumerable spaces.

use std::fmt::Write;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use qalign_core::analysis::evt::simulate_normalized_max;
use qalign_core::analysis::mixture::fit_reward_mixture_report;
use qalign_core::analysis::{beta_star, empirical_tv, gumbel_approx, gumbel_cdf, ks_statistic};
use qalign_core::space::EnumerableSpace;
use qalign_core::target::{exact_distribution, score_space, TargetSpec};
use qalign_core::{Error, MixtureFit};

use crate::config::{BackendSpec, Method};
use crate::run::{load_chains, load_sample_rewards, read_meta};
use crate::svg::{histogram, Chart, Series};

pub const GUMBEL_NS: [u64; 10] = [2, 4, 8, 16, 32, 64, 128, 256, 512, 1024];

pub struct AnalyzeOptions {
    pub space: Option<PathBuf>,
    pub trials: usize,
    pub seed: u64,
    /// Points on each TV-vs-steps curve.
    pub tv_points: usize,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        Self { space: None, trials: 10_000, seed: 0, tv_points: 50 }
    }
}

/// `n,a_n,b_n,beta_star` rows; `n` values below the minimum for this fit
/// get empty cells.
pub fn gumbel_rows(fit: &MixtureFit, ns: &[u64]) -> String {
    let mut s = String::new();
    for &n in ns {
        match (gumbel_approx(fit, n), beta_star(fit, n)) {
            (Ok(g), Ok(b)) => {
                let _ = writeln!(s, "{n},{},{},{}", g.location, g.scale, b.get());
            }
            _ => {
                let _ = writeln!(s, "{n},,,");
            }
        }
    }
    s
}

fn mixture_overlay(fit: &MixtureFit, rewards: &[f64]) -> Series {
    let lo = rewards.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pad = 0.1 * (hi - lo).max(1e-9);
    let points = (0..=200)
        .map(|k| {
            let x = lo - pad + (hi - lo + 2.0 * pad) * k as f64 / 200.0;
            (x, fit.log_density(x).exp())
        })
        .collect();
    Series { label: "mixture fit".into(), points }
}

/// Write analysis files into `out` and return their paths.
pub fn cmd_analyze(run: &Path, out: &Path, opts: &AnalyzeOptions) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out)?;
    let meta = read_meta(run)?;
    let mut written = Vec::new();
    let mut put = |name: &str, body: String| -> Result<()> {
        let p = out.join(name);
        fs::write(&p, body).with_context(|| format!("writing {}", p.display()))?;
        written.push(p);
        Ok(())
    };

    // reward mixtures from independent samples
    let rewards = load_sample_rewards(run)?;
    if !rewards.is_empty() {
        let mut fits = String::from("prompt_id,w1,mu1,sigma1,w2,mu2,sigma2,dominant,log_likelihood,iterations,note\n");
        let mut table = String::from("prompt_id,n,a_n,b_n,beta_star\n");
        for (id, rs) in &rewards {
            match fit_reward_mixture_report(rs) {
                Ok(r) => {
                    let f = r.fit;
                    let _ = writeln!(
                        fits,
                        "{id},{},{},{},{},{},{},{},{},{},",
                        f.weights[0], f.means[0], f.sigmas[0], f.weights[1], f.means[1], f.sigmas[1], f.dominant + 1,
                        r.log_likelihood, r.iterations
                    );
                    for row in gumbel_rows(&f, &GUMBEL_NS).lines() {
                        let _ = writeln!(table, "{id},{row}");
                    }
                    let chart = Chart {
                        title: format!("Rewards for {id}"),
                        x_label: "reward".into(),
                        y_label: "density".into(),
                        log_x: false,
                        series: vec![mixture_overlay(&f, rs)],
                        bars: Some(histogram(rs, 30)),
                    };
                    put(&format!("reward_hist_{id}.svg"), chart.render())?;
                }
                Err(e @ (Error::Degenerate(_) | Error::InvalidArgument(_))) => {
                    let _ = writeln!(fits, "{id},,,,,,,,,,{}", e.to_string().replace(',', ";"));
                }
                Err(e) => return Err(e.into()),
            }
        }
        put("mixture_fits.csv", fits)?;
        put("gumbel.csv", table)?;
    }

    // normalized max of standard normals against the Gumbel law
    let mut ks = String::from("n,trials,ks\n");
    let mut series = Vec::new();
    for n in [8u64, 32, 128] {
        let z = simulate_normalized_max(n, opts.trials, opts.seed.wrapping_add(n))?;
        let _ = writeln!(ks, "{n},{},{}", opts.trials, ks_statistic(&z, gumbel_cdf));
        if n == 32 {
            let bars = histogram(&z, 40);
            let gumbel = Series {
                label: "Gumbel".into(),
                points: (0..=200)
                    .map(|k| {
                        let x = -3.0 + 10.0 * k as f64 / 200.0;
                        (x, (-x - (-x).exp()).exp())
                    })
                    .collect(),
            };
            series.push((bars, gumbel));
        }
    }
    put("gumbel_ks.csv", ks)?;
    if let Some((bars, gumbel)) = series.pop() {
        let chart = Chart {
            title: "Normalized max of 32 standard normals".into(),
            x_label: "(max - a_n) / b_n".into(),
            y_label: "density".into(),
            log_x: false,
            series: vec![gumbel],
            bars: Some(bars),
        };
        put("normalized_max.svg", chart.render())?;
    }

    // TV against the exact target when the space is known
    let space_path = opts.space.clone().or_else(|| match &meta.config.generator {
        BackendSpec::Toy { space, .. } | BackendSpec::Simulated { space, .. } => Some(space.clone()),
        _ => None,
    });
    if let (Method::Qalign, Some(path)) = (meta.method, space_path) {
        let space = EnumerableSpace::from_json_file(&path)?;
        let beta = meta.config.beta().context("qalign run without beta")?;
        let exact = exact_distribution(&TargetSpec::new(beta), &score_space(&space)?)?;
        let (_, chains) = load_chains(run)?;
        let mut tv = String::from("prompt_id,chain,step,tv\n");
        for (id, cs) in &chains {
            for (k, records) in cs.iter().enumerate() {
                let total = records.len();
                let points = opts.tv_points.clamp(1, total);
                for j in 1..=points {
                    let upto = (total * j / points).max(1);
                    let d = empirical_tv(records[..upto].iter().map(|r| &r.state), &exact, 0.1);
                    let _ = writeln!(tv, "{id},{k},{},{d}", upto - 1);
                }
            }
        }
        put("tv_curve.csv", tv)?;
    }
    Ok(written)
}
