//! Seeded sweeps of `identify` over noise levels or sample sizes.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use rayon::prelude::*;
use serde::Serialize;

use prodmix::json;
use prodmix::recover::{effective_threshold, identify, Diagnostics};
use prodmix::{model_distance, random_model, SeparatedRows};

use crate::{build_oracle, ExperimentConfig, OracleKind, SolverArgs};

#[derive(Args)]
pub struct BenchmarkArgs {
    #[arg(long)]
    k: usize,
    #[arg(long)]
    n: usize,
    /// First seed; trial t uses seed + t for the model and the oracle.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    trials: u64,
    #[arg(long, value_enum, default_value = "exact")]
    oracle: OracleKind,
    /// Noise levels for the perturbed oracle.
    #[arg(long, value_delimiter = ',')]
    eps: Vec<f64>,
    /// Sample counts for the empirical oracle.
    #[arg(long, value_delimiter = ',')]
    samples: Vec<usize>,
    /// Only the first COUNT rows of each model are separated.
    #[arg(long = "separated-rows", value_name = "COUNT")]
    separated_rows: Option<usize>,
    #[command(flatten)]
    solver: SolverArgs,
    /// Output directory for benchmark.csv, trials.jsonl and aggregate.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Cell {
    Exact,
    Eps(f64),
    Samples(usize),
}

impl Cell {
    fn level(self) -> Option<f64> {
        match self {
            Cell::Exact => None,
            Cell::Eps(e) => Some(e),
            Cell::Samples(n) => Some(n as f64),
        }
    }
}

#[derive(Serialize)]
struct TrialRecord {
    k: usize,
    n: usize,
    zeta: f64,
    pi_min: f64,
    mode: OracleKind,
    eps_or_n: Option<f64>,
    seed: u64,
    model_distance: Option<f64>,
    search_ms: Option<f64>,
    bootstrap_ms: Option<f64>,
    power_ms: Option<f64>,
    recover_ms: Option<f64>,
    failure_stage: Option<String>,
    error: Option<String>,
    diagnostics: Option<Diagnostics>,
}

#[derive(Serialize)]
struct CellSummary {
    mode: OracleKind,
    eps_or_n: Option<f64>,
    trials: usize,
    successes: usize,
    failures: BTreeMap<String, usize>,
    median: Option<f64>,
    q10: Option<f64>,
    q90: Option<f64>,
}

#[derive(Serialize)]
struct Aggregate {
    config: ExperimentConfig,
    trials_per_cell: u64,
    cells: Vec<CellSummary>,
    /// Least-squares slope of log median error against log level.
    slope: Option<f64>,
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64))
}

fn slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = points.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

fn run_trial(args: &BenchmarkArgs, cell: Cell, seed: u64) -> TrialRecord {
    let solver = &args.solver;
    let mut rec = TrialRecord {
        k: args.k,
        n: args.n,
        zeta: solver.zeta,
        pi_min: solver.pi_min,
        mode: args.oracle,
        eps_or_n: cell.level(),
        seed,
        model_distance: None,
        search_ms: None,
        bootstrap_ms: None,
        power_ms: None,
        recover_ms: None,
        failure_stage: None,
        error: None,
        diagnostics: None,
    };
    let separated = args.separated_rows.map_or(SeparatedRows::All, SeparatedRows::Count);
    let outcome = random_model(args.k, args.n, solver.zeta, solver.pi_min, separated, seed)
        .map_err(anyhow::Error::from)
        .and_then(|truth| {
            let (eps, samples) = match cell {
                Cell::Exact => (None, None),
                Cell::Eps(e) => (Some(e), None),
                Cell::Samples(n) => (None, Some(n)),
            };
            let oracle = build_oracle(&truth, args.oracle, eps, samples, seed)?;
            Ok((truth, oracle))
        });
    let (truth, oracle) = match outcome {
        Ok(pair) => pair,
        Err(e) => {
            rec.error = Some(format!("{e:#}"));
            return rec;
        }
    };
    match identify(&oracle, args.k, solver.zeta, solver.pi_min, &solver.options()) {
        Ok(found) => {
            let found = if solver.timings { found } else { found.without_timings() };
            rec.model_distance = model_distance(&truth, &found.model).ok().map(|a| a.max_param_error);
            if let Some(t) = &found.diagnostics.timings {
                rec.search_ms = Some(t.search_ms);
                rec.bootstrap_ms = Some(t.bootstrap_ms);
                rec.power_ms = Some(t.power_ms);
                rec.recover_ms = Some(t.recover_ms);
            }
            rec.diagnostics = Some(found.diagnostics);
        }
        Err(f) => {
            rec.failure_stage = f.stage().map(|s| s.to_string());
            rec.error = Some(f.error.to_string());
        }
    }
    rec
}

fn csv_float(v: Option<f64>) -> String {
    v.map(json::format_float).unwrap_or_default()
}

pub fn cmd_benchmark(args: BenchmarkArgs) -> anyhow::Result<u8> {
    let cells: Vec<Cell> = match args.oracle {
        OracleKind::Exact => vec![Cell::Exact],
        OracleKind::Perturbed => {
            anyhow::ensure!(!args.eps.is_empty(), "--oracle perturbed needs --eps");
            args.eps.iter().map(|&e| Cell::Eps(e)).collect()
        }
        OracleKind::Empirical => {
            anyhow::ensure!(!args.samples.is_empty(), "--oracle empirical needs --samples");
            args.samples.iter().map(|&n| Cell::Samples(n)).collect()
        }
    };
    // Fail fast on a configuration no seed can satisfy.
    let separated = args.separated_rows.map_or(SeparatedRows::All, SeparatedRows::Count);
    random_model(args.k, args.n, args.solver.zeta, args.solver.pi_min, separated, args.seed)?;

    let jobs: Vec<(Cell, u64)> = cells
        .iter()
        .flat_map(|&c| (0..args.trials).map(move |t| (c, args.seed.wrapping_add(t))))
        .collect();
    let records: Vec<TrialRecord> = jobs.par_iter().map(|&(c, s)| run_trial(&args, c, s)).collect();

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut csv = csv::Writer::from_path(args.out.join("benchmark.csv"))?;
    csv.write_record([
        "k",
        "n",
        "zeta",
        "pi_min",
        "mode",
        "eps_or_N",
        "seed",
        "model_distance",
        "search_ms",
        "bootstrap_ms",
        "power_ms",
        "recover_ms",
        "failure_stage",
    ])?;
    let mut jsonl = String::new();
    for r in &records {
        let mode = serde_json::to_value(r.mode)?.as_str().unwrap_or_default().to_string();
        csv.write_record([
            r.k.to_string(),
            r.n.to_string(),
            json::format_float(r.zeta),
            json::format_float(r.pi_min),
            mode,
            csv_float(r.eps_or_n),
            r.seed.to_string(),
            csv_float(r.model_distance),
            csv_float(r.search_ms),
            csv_float(r.bootstrap_ms),
            csv_float(r.power_ms),
            csv_float(r.recover_ms),
            r.failure_stage.clone().unwrap_or_default(),
        ])?;
        jsonl.push_str(&json::to_string_line(r)?);
        jsonl.push('\n');
    }
    csv.flush()?;
    fs::write(args.out.join("trials.jsonl"), jsonl)?;

    let mut summaries = Vec::with_capacity(cells.len());
    for (ci, &cell) in cells.iter().enumerate() {
        let chunk = &records[ci * args.trials as usize..(ci + 1) * args.trials as usize];
        let mut errors: Vec<f64> = chunk.iter().filter_map(|r| r.model_distance).collect();
        errors.sort_by(f64::total_cmp);
        let mut failures = BTreeMap::new();
        for r in chunk.iter().filter(|r| r.model_distance.is_none()) {
            let key = r.failure_stage.clone().unwrap_or_else(|| "error".into());
            *failures.entry(key).or_insert(0) += 1;
        }
        summaries.push(CellSummary {
            mode: args.oracle,
            eps_or_n: cell.level(),
            trials: chunk.len(),
            successes: errors.len(),
            failures,
            median: quantile(&errors, 0.5),
            q10: quantile(&errors, 0.1),
            q90: quantile(&errors, 0.9),
        });
    }
    let points: Vec<(f64, f64)> = summaries
        .iter()
        .filter_map(|s| match (s.eps_or_n, s.median) {
            (Some(x), Some(y)) if x > 0.0 && y > 0.0 => Some((x.ln(), y.ln())),
            _ => None,
        })
        .collect();
    let options = args.solver.options();
    let aggregate = Aggregate {
        config: ExperimentConfig {
            k: args.k,
            n: args.n,
            zeta: args.solver.zeta,
            pi_min: args.solver.pi_min,
            seed: args.seed,
            oracle: args.oracle,
            eps: None,
            samples: None,
            selection_threshold: effective_threshold(&options, args.k, args.solver.zeta, args.solver.pi_min),
            options,
            model: None,
            dataset: None,
        },
        trials_per_cell: args.trials,
        cells: summaries,
        slope: slope(&points),
    };
    fs::write(args.out.join("aggregate.json"), json::to_string_pretty(&aggregate)?)?;
    Ok(0)
}
