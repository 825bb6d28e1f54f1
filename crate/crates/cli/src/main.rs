use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use prodmix::bootstrap::{hankel_gate, HankelGate, HankelMatrix};
use prodmix::json;
use prodmix::power::{learn_power_distribution, PowerSolution};
use prodmix::recover::{effective_threshold, identify, identify_with_selection, Failure, RecoveredModel};
use prodmix::stability::{stability_sweep, SweepConfig};
use prodmix::{
    draw_samples, model_distance, random_model, Dataset, FamilySelection, IdentifyOptions, MixtureModel,
    MomentOracle, SearchMode, SeparatedRows, Strategy,
};

mod bench;

/// Exit code for a run the algorithm itself rejected.
const EXIT_GATED: u8 = 2;

#[derive(Parser)]
#[command(name = "prodmix", version, about = "Identify mixtures of product distributions from multilinear moments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a random model with separated rows.
    Generate(GenerateArgs),
    /// Draw samples from a model file.
    Sample(SampleArgs),
    /// Learn a model from a model's moments or from a dataset.
    Identify(IdentifyArgs),
    /// Run identification over a grid of noise levels or sample sizes.
    Benchmark(bench::BenchmarkArgs),
    /// Recover a k-spike distribution from a JSON list of 2k+1 moments.
    Kspike(KspikeArgs),
    /// Run the Monte-Carlo stability checks.
    VerifyStability(StabilityArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleKind {
    Exact,
    Perturbed,
    Empirical,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum StrategyArg {
    Sequential,
    Doubling,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Sequential => Strategy::Sequential,
            StrategyArg::Doubling => Strategy::Doubling,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SearchArg {
    Exhaustive,
    AllSeparated,
}

impl From<SearchArg> for SearchMode {
    fn from(s: SearchArg) -> Self {
        match s {
            SearchArg::Exhaustive => SearchMode::Exhaustive,
            SearchArg::AllSeparated => SearchMode::AllSeparated,
        }
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    k: usize,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    zeta: f64,
    #[arg(long = "pi-min")]
    pi_min: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Only the first COUNT rows are separated; the rest are uniform.
    #[arg(long = "separated-rows", value_name = "COUNT")]
    separated_rows: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Packed binary instead of text.
    #[arg(long)]
    binary: bool,
}

/// Settings shared by `identify` and `benchmark`.
#[derive(Args, Clone)]
pub struct SolverArgs {
    #[arg(long)]
    pub zeta: f64,
    #[arg(long = "pi-min")]
    pub pi_min: f64,
    #[arg(long, value_enum, default_value = "doubling")]
    pub strategy: StrategyArg,
    #[arg(long, value_enum, default_value = "all-separated")]
    pub search: SearchArg,
    /// c in the selection threshold π_min ζ^(c k²).
    #[arg(long = "threshold-exponent", default_value_t = 10.0)]
    pub threshold_exponent: f64,
    /// Absolute selection threshold; overrides --threshold-exponent.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Include wall-clock stage times in the output.
    #[arg(long)]
    pub timings: bool,
}

impl SolverArgs {
    pub fn options(&self) -> IdentifyOptions {
        IdentifyOptions {
            strategy: self.strategy.into(),
            search: self.search.into(),
            threshold_exponent: self.threshold_exponent,
            threshold: self.threshold,
        }
    }
}

#[derive(Args)]
struct IdentifyArgs {
    /// Model file; the moment source unless --dataset is given, and the
    /// reference for model_distance.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Dataset file (text or binary); implies the empirical oracle.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Number of components; defaults to the model's.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_enum)]
    oracle: Option<OracleKind>,
    #[arg(long)]
    eps: Option<f64>,
    /// Samples to draw from --model for the empirical oracle.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long = "dump-bootstrap")]
    dump_bootstrap: Option<PathBuf>,
    /// Use this family selection instead of searching.
    #[arg(long = "families-in")]
    families_in: Option<PathBuf>,
    #[arg(long = "families-out")]
    families_out: Option<PathBuf>,
}

#[derive(Args)]
struct KspikeArgs {
    /// JSON array of moments μ_0..μ_2k, or an object with a "moments" array.
    #[arg(long)]
    moments: PathBuf,
    /// With --pi-min, also report the Hankel gate.
    #[arg(long)]
    zeta: Option<f64>,
    #[arg(long = "pi-min")]
    pi_min: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct StabilityArgs {
    #[arg(long, default_value_t = 1000)]
    instances: usize,
    #[arg(long, default_value_t = 0.2)]
    zeta: f64,
    #[arg(long = "k-max-core", default_value_t = 4)]
    k_max_core: usize,
    #[arg(long = "k-max-nodes", default_value_t = 5)]
    k_max_nodes: usize,
    #[arg(long = "dim-max", default_value_t = 6)]
    dim_max: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
pub struct ExperimentConfig {
    pub k: usize,
    pub n: usize,
    pub zeta: f64,
    pub pi_min: f64,
    pub seed: u64,
    pub oracle: OracleKind,
    pub eps: Option<f64>,
    pub samples: Option<usize>,
    pub options: IdentifyOptions,
    pub selection_threshold: f64,
    pub model: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
}

#[derive(Serialize)]
struct IdentifyReport<'a> {
    config: ExperimentConfig,
    status: &'static str,
    failure_stage: Option<String>,
    error: Option<String>,
    triples_tried: usize,
    model_distance: Option<f64>,
    /// alignment[j]: recovered component matched to true component j.
    alignment: Option<Vec<usize>>,
    recovered: Option<&'a RecoveredModel>,
}

fn write_output(path: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().lock().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

/// Seed for the oracle's randomness, kept apart from the model's.
pub fn data_seed(seed: u64) -> u64 {
    seed ^ 0xD1B5_4A32_D192_ED03
}

pub fn build_oracle(
    model: &MixtureModel,
    kind: OracleKind,
    eps: Option<f64>,
    samples: Option<usize>,
    seed: u64,
) -> anyhow::Result<MomentOracle> {
    Ok(match kind {
        OracleKind::Exact => MomentOracle::exact(model.clone()),
        OracleKind::Perturbed => {
            let eps = eps.context("--oracle perturbed needs --eps")?;
            MomentOracle::perturbed(model.clone(), eps, data_seed(seed))?
        }
        OracleKind::Empirical => {
            let n = samples.context("--oracle empirical needs --samples or --dataset")?;
            MomentOracle::empirical(draw_samples(model, n, data_seed(seed))?)
        }
    })
}

fn cmd_generate(args: GenerateArgs) -> anyhow::Result<u8> {
    let separated = args.separated_rows.map_or(SeparatedRows::All, SeparatedRows::Count);
    let model = random_model(args.k, args.n, args.zeta, args.pi_min, separated, args.seed)?;
    write_output(args.out.as_deref(), &model.to_json()?)?;
    Ok(0)
}

fn cmd_sample(args: SampleArgs) -> anyhow::Result<u8> {
    let model = MixtureModel::load(&args.model)?;
    let data = draw_samples(&model, args.samples, args.seed)?;
    data.save(&args.out, args.binary)?;
    Ok(0)
}

fn cmd_identify(args: IdentifyArgs) -> anyhow::Result<u8> {
    let truth = args.model.as_ref().map(MixtureModel::load).transpose()?;
    let (oracle, kind) = match (&args.dataset, &truth) {
        (Some(path), _) => {
            if matches!(args.oracle, Some(k) if k != OracleKind::Empirical) {
                bail!("--dataset only works with the empirical oracle");
            }
            (MomentOracle::empirical(Dataset::load(path)?), OracleKind::Empirical)
        }
        (None, Some(model)) => {
            let kind = args.oracle.unwrap_or(OracleKind::Exact);
            (build_oracle(model, kind, args.eps, args.samples, args.seed)?, kind)
        }
        (None, None) => bail!("identify needs --model or --dataset"),
    };
    let k = match (args.k, &truth) {
        (Some(k), _) => k,
        (None, Some(m)) => m.k(),
        (None, None) => bail!("--k is required without --model"),
    };
    if let Some(m) = &truth {
        if m.n() != oracle.n() {
            bail!("model has {} rows but the dataset has {}", m.n(), oracle.n());
        }
    }
    let solver = &args.solver;
    let options = solver.options();
    let config = ExperimentConfig {
        k,
        n: oracle.n(),
        zeta: solver.zeta,
        pi_min: solver.pi_min,
        seed: args.seed,
        oracle: kind,
        eps: args.eps.filter(|_| kind == OracleKind::Perturbed),
        samples: if kind == OracleKind::Empirical { args.samples } else { None },
        selection_threshold: effective_threshold(&options, k, solver.zeta, solver.pi_min),
        options,
        model: args.model.clone(),
        dataset: args.dataset.clone(),
    };

    let result = match &args.families_in {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            identify_with_selection(&oracle, FamilySelection::from_json(&text)?, solver.zeta, solver.pi_min)
        }
        None => identify(&oracle, k, solver.zeta, solver.pi_min, &config.options),
    };

    match result {
        Ok(mut rec) => {
            if !solver.timings {
                rec = rec.without_timings();
            }
            let alignment = truth.as_ref().map(|t| model_distance(t, &rec.model)).transpose()?;
            if let Some(path) = &args.dump_bootstrap {
                fs::write(path, rec.bootstrap.to_json()?)?;
            }
            if let Some(path) = &args.families_out {
                fs::write(path, rec.diagnostics.selection.to_json()?)?;
            }
            let report = IdentifyReport {
                config,
                status: "ok",
                failure_stage: None,
                error: None,
                triples_tried: rec.diagnostics.triples_tried,
                model_distance: alignment.as_ref().map(|a| a.max_param_error),
                alignment: alignment.map(|a| a.permutation),
                recovered: Some(&rec),
            };
            write_output(args.out.as_deref(), &json::to_string_pretty(&report)?)?;
            Ok(0)
        }
        Err(Failure { error, triples_tried }) => {
            let Some(stage) = error.stage() else {
                return Err(error.into());
            };
            let report = IdentifyReport {
                config,
                status: "failed",
                failure_stage: Some(stage.to_string()),
                error: Some(error.to_string()),
                triples_tried,
                model_distance: None,
                alignment: None,
                recovered: None,
            };
            write_output(args.out.as_deref(), &json::to_string_pretty(&report)?)?;
            eprintln!("identify failed at stage {stage}: {error}");
            Ok(EXIT_GATED)
        }
    }
}

#[derive(Serialize)]
struct KspikeReport {
    k: usize,
    support: Vec<f64>,
    weights: Vec<f64>,
    residual: f64,
    base_sigma_k: f64,
    max_imaginary: f64,
    polish_steps: usize,
    hankel_eigenvalues: Vec<f64>,
    gate: Option<HankelGate>,
}

fn cmd_kspike(args: KspikeArgs) -> anyhow::Result<u8> {
    let text = fs::read_to_string(&args.moments).with_context(|| format!("reading {}", args.moments.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let list = value.get("moments").unwrap_or(&value);
    let moments: Vec<f64> = serde_json::from_value(list.clone()).context("expected a JSON array of numbers")?;
    let h = HankelMatrix::from_moments(moments)?;
    let gate = match (args.zeta, args.pi_min) {
        (Some(z), Some(p)) => Some(hankel_gate(&h, p, z)),
        (None, None) => None,
        _ => bail!("--zeta and --pi-min go together"),
    };
    let PowerSolution { distribution, residual, base_sigma_k, max_imaginary, polish_steps } = match learn_power_distribution(&h) {
        Ok(sol) => sol,
        Err(e) => match e.stage() {
            Some(stage) => {
                eprintln!("kspike failed at stage {stage}: {e}");
                return Ok(EXIT_GATED);
            }
            None => return Err(e.into()),
        },
    };
    let report = KspikeReport {
        k: distribution.k(),
        support: distribution.support().to_vec(),
        weights: distribution.weights().to_vec(),
        residual,
        base_sigma_k,
        max_imaginary,
        polish_steps,
        hankel_eigenvalues: h.eigenvalues.clone(),
        gate,
    };
    write_output(args.out.as_deref(), &json::to_string_pretty(&report)?)?;
    Ok(0)
}

fn cmd_verify_stability(args: StabilityArgs) -> anyhow::Result<u8> {
    let config = SweepConfig {
        instances: args.instances,
        zeta: args.zeta,
        k_max_core: args.k_max_core,
        k_max_nodes: args.k_max_nodes,
        dim_max: args.dim_max,
        seed: args.seed,
    };
    let report = stability_sweep(&config)?;
    write_output(args.out.as_deref(), &json::to_string_pretty(&report)?)?;
    let violations = report.total_violations();
    if violations > 0 {
        eprintln!("verify-stability: {violations} violations");
        return Ok(EXIT_GATED);
    }
    Ok(0)
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Sample(a) => cmd_sample(a),
        Command::Identify(a) => cmd_identify(a),
        Command::Benchmark(a) => bench::cmd_benchmark(a),
        Command::Kspike(a) => cmd_kspike(a),
        Command::VerifyStability(a) => cmd_verify_stability(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
