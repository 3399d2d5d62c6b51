use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use kgood_core::bounds::{kernel_goodness_params, BoundForm};
use kgood_core::goodness::{
    default_second_stage_reg, mean_embedding_goodness, misclassification_rate, train_second_stage,
    unit_norm_goodness, PredictorKind,
};
use kgood_core::harness::experiments::{run_experiment, ExperimentKind};
use kgood_core::harness::load_dataset;
use kgood_core::kernels::load_kernels;
use kgood_core::optimize::solve;
use kgood_core::{
    BoundInputs, BoundReport, CombinationVector, DualPredictor, ExperimentConfig, GoodnessReport, KappaVector,
    Regularizer, SolveResult, SolverConfig,
};

/// Exit status when an experiment finished but some trials failed.
const PARTIAL_FAILURE: u8 = 2;

#[derive(Parser)]
#[command(name = "kgood", version, about = "Learn kernel combinations and evaluate their bounds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Learn a combination on a dataset and report its goodness.
    Train(TrainArgs),
    /// Evaluate the generalization bounds for given constants.
    Bounds(BoundsArgs),
    /// Run an experiment from a JSON config and write its report.
    Experiment(ExperimentArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum RegArg {
    L2,
    L1,
}

impl From<RegArg> for Regularizer {
    fn from(r: RegArg) -> Self {
        match r {
            RegArg::L2 => Regularizer::L2,
            RegArg::L1 => Regularizer::L1,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PredictorArg {
    MeanEmbedding,
    Trained,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormArg {
    Exact,
    Simplified,
}

#[derive(clap::Args)]
struct TrainArgs {
    /// CSV with rows `label,x_1,...,x_d`.
    #[arg(long)]
    data: PathBuf,
    /// JSON array of kernel entries.
    #[arg(long)]
    kernels: PathBuf,
    #[arg(long, value_enum, default_value = "l2")]
    reg: RegArg,
    #[arg(long)]
    lambda: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 200_000)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    epsilon_opt: f64,
    /// Second-stage predictor used for the misclassification rate.
    #[arg(long, value_enum, default_value = "mean-embedding")]
    predictor: PredictorArg,
    /// Held-out CSV for the misclassification rate; defaults to the training data.
    #[arg(long)]
    test: Option<PathBuf>,
}

#[derive(clap::Args)]
struct BoundsArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    p: usize,
    #[arg(long)]
    lambda: f64,
    #[arg(long)]
    delta: f64,
    /// Euclidean norm of the kernel bounds; defaults to `sqrt(p)`.
    #[arg(long)]
    kappa_l2: Option<f64>,
    /// Largest kernel bound; defaults to 1.
    #[arg(long)]
    kappa_linf: Option<f64>,
    #[arg(long, value_enum, default_value = "l2")]
    reg: RegArg,
    #[arg(long, value_enum, default_value = "exact")]
    form: FormArg,
}

#[derive(clap::Args)]
struct ExperimentArgs {
    /// bound-check, reverse-bound, oracle, sparsity or rademacher.
    kind: String,
    #[arg(long)]
    config: PathBuf,
    /// Report path; defaults to the config's `output`, else stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct TrainOutput {
    mu: CombinationVector,
    solve: SolveResult,
    goodness: GoodnessReport,
    misclassification: f64,
}

fn train(args: &TrainArgs) -> anyhow::Result<()> {
    let data = load_dataset(&args.data)?;
    let kernels = load_kernels(&args.kernels)?;
    let config = SolverConfig::new(args.lambda)
        .max_iters(args.max_iters)
        .epsilon_opt(args.epsilon_opt)
        .seed(args.seed);
    let sol = solve(args.reg.into(), &data, &kernels, &config)?;
    let mu = sol.mu_hat.clone();
    let test = match &args.test {
        Some(p) => load_dataset(p)?,
        None => data.clone(),
    };
    let (goodness, pred) = match args.predictor {
        PredictorArg::MeanEmbedding => (
            mean_embedding_goodness(&mu, &data, &data, &kernels)?,
            DualPredictor::mean_embedding(data.clone(), mu.clone())?,
        ),
        PredictorArg::Trained => {
            let kappa = KappaVector::from_kernels(&kernels);
            let reg = default_second_stage_reg(&mu, &kappa, data.len())?;
            let pred = train_second_stage(&mu, &data, &kernels, reg, 20 * data.len(), args.seed)?;
            let (_, gamma) = kernel_goodness_params(&mu, &kappa, 0.0)?;
            let report = unit_norm_goodness(&pred, &data, &kernels, gamma)?;
            debug_assert_eq!(report.predictor_kind, PredictorKind::Trained);
            (report, pred)
        }
    };
    let misclassification = misclassification_rate(&pred, &test, &kernels)?;
    print_json(&TrainOutput {
        mu,
        solve: sol,
        goodness,
        misclassification,
    })
}

fn bounds(args: &BoundsArgs) -> anyhow::Result<()> {
    if args.p == 0 {
        bail!("p must be >= 1");
    }
    let inputs = BoundInputs {
        n: args.n,
        p: args.p,
        lambda: args.lambda,
        delta: args.delta,
        kappa_l2: args.kappa_l2.unwrap_or((args.p as f64).sqrt()),
        kappa_linf: args.kappa_linf.unwrap_or(1.0),
        r: None,
        s: None,
    };
    let form = match args.form {
        FormArg::Exact => BoundForm::Exact,
        FormArg::Simplified => BoundForm::Simplified,
    };
    print_json(&BoundReport::compute(inputs, args.reg.into(), form)?)
}

fn read_config(path: &Path, kind: ExperimentKind) -> anyhow::Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut value: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let obj = value.as_object_mut().context("config must be a JSON object")?;
    let given = serde_json::to_value(kind)?;
    match obj.get("kind") {
        Some(k) if *k != given => bail!("config kind {k} does not match requested {given}"),
        Some(_) => {}
        None => {
            obj.insert("kind".into(), given);
        }
    }
    serde_json::from_value(value).with_context(|| format!("invalid config {}", path.display()))
}

/// Returns whether every trial succeeded.
fn experiment(args: &ExperimentArgs) -> anyhow::Result<bool> {
    let kind: ExperimentKind = args.kind.parse()?;
    let config = read_config(&args.config, kind)?;
    let report = run_experiment(&config)?;
    for f in &report.failures {
        log::warn!("trial {} failed: {}", f.trial, f.error);
    }
    match args.out.as_ref().or(config.output.as_ref()) {
        Some(path) => report.write(path)?,
        None => print_json(&report)?,
    }
    Ok(!report.has_failures())
}

fn print_json<T: Serialize>(value: &T) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(a) => train(a).map(|_| true),
        Command::Bounds(a) => bounds(a).map(|_| true),
        Command::Experiment(a) => experiment(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(PARTIAL_FAILURE),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
