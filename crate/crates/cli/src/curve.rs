//! `curve`: error rate against inference compute, one curve per run.

use std::collections::BTreeMap;
use std::fmt::Write;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{ensure, Context, Result};
use qalign_core::decision::normalize_answer;
use qalign_core::{BudgetCurve, BudgetPoint};
use serde::Deserialize;

use crate::run::{load_decisions, read_jsonl};
use crate::svg::{Chart, Series};

#[derive(Debug, Deserialize)]
struct GoldLine {
    id: String,
    gold: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scoring {
    /// Error = 1 - accuracy against gold answers.
    Gold,
    /// Error = 1 - mean expected utility, when gold answers are missing.
    Utility,
}

pub struct CurveOutput {
    pub curves: Vec<(BudgetCurve, Vec<usize>, Scoring)>,
    pub warnings: Vec<String>,
    pub csv: PathBuf,
    pub svg: PathBuf,
}

/// Build one curve per run directory and write `curve.csv` and `curve.svg`
/// into `out`. Flops and tokens are totals over all prompts of a run.
pub fn cmd_curve(runs: &[PathBuf], gold_file: Option<&Path>, out: &Path) -> Result<CurveOutput> {
    ensure!(!runs.is_empty(), "no run directories given");
    let override_gold: BTreeMap<String, String> = match gold_file {
        Some(p) => read_jsonl::<GoldLine>(p)?.into_iter().map(|g| (g.id, g.gold)).collect(),
        None => BTreeMap::new(),
    };
    let mut curves = Vec::new();
    let mut warnings = Vec::new();
    for dir in runs {
        let (meta, prompts, decisions) = load_decisions(dir).with_context(|| format!("loading run {}", dir.display()))?;
        let cfg = &meta.config;
        let gold: Vec<Option<String>> = prompts
            .iter()
            .map(|p| override_gold.get(&p.id).cloned().or_else(|| p.gold().map(str::to_owned)))
            .collect();
        let scoring = if gold.iter().all(Option::is_some) {
            Scoring::Gold
        } else {
            warnings.push(format!(
                "{}: {} prompts lack gold answers; plotting 1 - expected utility",
                meta.run_id,
                gold.iter().filter(|g| g.is_none()).count()
            ));
            Scoring::Utility
        };
        let mut curve = BudgetCurve::new(meta.method.label());
        let mut budgets = Vec::new();
        for (k, &budget) in cfg.budget_schedule.iter().enumerate() {
            let mut flops = 0.0;
            let mut tokens = 0u64;
            let mut score = 0.0;
            for (p, (lines, g)) in decisions.iter().zip(&gold).enumerate() {
                let line = lines
                    .get(k)
                    .with_context(|| format!("{}: prompt {} has no decision for budget {budget}", meta.run_id, prompts[p].id))?;
                ensure!(line.budget == budget, "{}: decisions out of order", meta.run_id);
                flops += line.flops;
                tokens += line.generated_tokens + line.scored_tokens;
                score += match scoring {
                    Scoring::Gold => {
                        let gold = normalize_answer(cfg.extractor, g.as_deref().expect("checked"));
                        f64::from(u8::from(line.report.selected_answer == gold))
                    }
                    Scoring::Utility => line.report.expected_utility.unwrap_or(0.0),
                };
            }
            let metric = (1.0 - score / prompts.len() as f64).clamp(0.0, 1.0);
            curve.push(BudgetPoint { flops, tokens, metric })?;
            budgets.push(budget);
        }
        curves.push((curve, budgets, scoring));
    }

    fs::create_dir_all(out)?;
    let mut csv = String::from("method,budget,flops,tokens,error,scoring\n");
    for (c, budgets, scoring) in &curves {
        let tag = match scoring {
            Scoring::Gold => "gold",
            Scoring::Utility => "utility",
        };
        for (p, b) in c.points().iter().zip(budgets) {
            let _ = writeln!(csv, "{},{b},{},{},{},{tag}", c.method_label, p.flops, p.tokens, p.metric);
        }
    }
    let csv_path = out.join("curve.csv");
    fs::write(&csv_path, csv)?;
    let chart = Chart {
        title: "Error vs inference compute".into(),
        x_label: "FLOPs".into(),
        y_label: "error".into(),
        log_x: true,
        series: curves
            .iter()
            .map(|(c, _, _)| Series {
                label: c.method_label.clone(),
                points: c.points().iter().map(|p| (p.flops, p.metric)).collect(),
            })
            .collect(),
        bars: None,
    };
    let svg_path = out.join("curve.svg");
    fs::write(&svg_path, chart.render())?;
    Ok(CurveOutput { curves, warnings, csv: csv_path, svg: svg_path })
}
