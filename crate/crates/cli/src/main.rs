use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use qalign_cli::analyze::{cmd_analyze, AnalyzeOptions};
use qalign_cli::config::RunConfig;
use qalign_cli::curve::cmd_curve;
use qalign_cli::run::{cmd_replay, cmd_run};
use qalign_cli::templates::load_prompts;
use qalign_cli::verify::{run_verify, Fault};
use qalign_core::analysis::{tune_beta, TuneOptions};
use qalign_core::backends::CachedReward;

#[derive(Parser)]
#[command(name = "qalign", version, about = "Test-time alignment by MCMC over completions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FaultArg {
    None,
    FlipLengthRatio,
    UnnormalizedIs,
}

#[derive(Subcommand)]
enum Command {
    /// Run a method over a prompt set, writing a resumable run directory.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Error rate against FLOPs for one or more runs.
    Curve {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// JSONL of {"id", "gold"} overriding gold answers in the runs.
        #[arg(long)]
        gold: Option<PathBuf>,
        #[arg(long, default_value = "curve")]
        out: PathBuf,
    },
    /// Pick beta so pilot chains accept about half their proposals.
    TuneBeta {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 8)]
        pilots: usize,
        #[arg(long, default_value_t = 32)]
        pilot_steps: usize,
        #[arg(long, default_value_t = 0.5)]
        target: f64,
    },
    /// Mixture fits, Gumbel table, histograms and TV curves for a run.
    Analyze {
        run: PathBuf,
        /// Space JSON used for exact TV; defaults to the run's toy space.
        #[arg(long)]
        space: Option<PathBuf>,
        #[arg(long, default_value = "analysis")]
        out: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Check every acceptance criterion on built-in toy problems.
    Verify {
        #[arg(long, value_enum, default_value = "none")]
        fault: FaultArg,
        /// Criterion ids to run (default: all).
        #[arg(long, value_delimiter = ',')]
        only: Vec<u8>,
        /// Write the full report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Recompute decisions from stored samples and compare.
    Replay { run: PathBuf },
}

fn tune(config: PathBuf, pilots: usize, pilot_steps: usize, target: f64) -> Result<()> {
    let cfg = RunConfig::load(&config)?;
    let prompts = load_prompts(&cfg.prompts, cfg.template_id.as_deref())?;
    let pilots: Vec<_> = prompts.into_iter().take(pilots).collect();
    let gen = cfg.generator.generator()?;
    let rm_spec = cfg.reward.as_ref().context("tuning beta needs a reward backend")?;
    let rm = CachedReward::new(rm_spec.reward(cfg.extractor)?);
    let mut opts = TuneOptions::new(cfg.max_len, cfg.seed);
    opts.pilot_steps = pilot_steps;
    opts.target_rate = target;
    let out = tune_beta(&pilots, gen.as_ref(), &rm, &opts)?;
    for (b, r) in &out.history {
        eprintln!("beta={b:.6} acceptance={r:.4}");
    }
    if let Some(w) = &out.warning {
        eprintln!("warning: {w}");
    }
    println!("beta = {}", out.beta);
    println!("acceptance = {:.4}", out.rate);
    println!("pilot_generated_tokens = {}", out.generated_tokens);
    Ok(())
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn real_main() -> Result<ExitCode> {
    match Cli::parse().command {
        Command::Run { config, out } => {
            let dir = cmd_run(&RunConfig::load(&config)?, &out)?;
            println!("{}", dir.display());
        }
        Command::Curve { runs, gold, out } => {
            let c = cmd_curve(&runs, gold.as_deref(), &out)?;
            for w in &c.warnings {
                eprintln!("warning: {w}");
            }
            println!("{}", c.csv.display());
            println!("{}", c.svg.display());
        }
        Command::TuneBeta { config, pilots, pilot_steps, target } => tune(config, pilots, pilot_steps, target)?,
        Command::Analyze { run, space, out, trials, seed } => {
            let opts = AnalyzeOptions { space, trials, seed, ..AnalyzeOptions::default() };
            for p in cmd_analyze(&run, &out, &opts)? {
                println!("{}", p.display());
            }
        }
        Command::Verify { fault, only, json } => {
            let fault = match fault {
                FaultArg::None => Fault::None,
                FaultArg::FlipLengthRatio => Fault::FlipLengthRatio,
                FaultArg::UnnormalizedIs => Fault::UnnormalizedIs,
            };
            if let Some(bad) = only.iter().find(|id| !(1..=10).contains(*id)) {
                bail!("unknown criterion {bad}");
            }
            let report = run_verify(fault, &only, |c| println!("{}", c.line()));
            if let Some(p) = json {
                std::fs::write(&p, serde_json::to_string_pretty(&report)? + "\n")?;
            }
            if !report.passed {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Replay { run } => {
            let mismatched = cmd_replay(&run)?;
            if mismatched.is_empty() {
                println!("replay matches");
            } else {
                for id in &mismatched {
                    println!("mismatch: {id}");
                }
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
