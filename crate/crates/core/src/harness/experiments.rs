//! Experiment drivers. Every trial draws its randomness from its own stream
//! of the master seed and trials are reduced in index order, so a report does
//! not depend on how many threads ran it.

use std::path::PathBuf;
use std::time::Instant;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{
    check_contraction, check_decoupling, empirical_rademacher, oblivious_lambda, oracle_sample_size_l1,
    oracle_sample_size_l2, rad_bound_l1, rad_bound_l2, Ball, BoundForm, BoundInputs, BoundReport, Expectation,
    OracleSampleSize, PairFeatureTable,
};
use crate::error::{Error, Result};
use crate::kernels::KappaVector;
use crate::optimize::{solve, Regularizer, SolverConfig};
use crate::risk::{true_risk_mc, PairSet};
use crate::rng;

use super::planted::{gen_planted, Planted, PlantedSpec};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    BoundCheck,
    ReverseBound,
    Oracle,
    Sparsity,
    Rademacher,
}

impl std::str::FromStr for ExperimentKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::InvalidParameter(format!("unknown experiment kind {s:?}")))
    }
}

/// How the oracle experiment picks `lambda` for each `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LambdaRule {
    /// `2 eps1 / (3 ||mu_o||^2)` (L2) or `2 eps1 / (3 ||mu_o||_1)` (L1).
    #[default]
    Planted,
    /// `n^(-1/3)`, which needs no knowledge of `mu_o`.
    Oblivious,
    /// The configured `lambda`.
    Fixed,
}

fn d_trials() -> usize {
    1
}
fn d_n() -> usize {
    200
}
fn d_p() -> usize {
    5
}
fn d_delta() -> f64 {
    0.1
}
fn d_regs() -> Vec<Regularizer> {
    vec![Regularizer::L2, Regularizer::L1]
}
fn d_max_iters() -> usize {
    2000
}
fn d_eps_opt() -> f64 {
    1e-4
}
fn d_support() -> Vec<usize> {
    vec![0]
}
fn d_margin() -> f64 {
    0.8
}
fn d_mc_pairs() -> usize {
    100_000
}
fn d_sweep() -> Vec<usize> {
    vec![100, 400, 1600]
}
fn d_threshold() -> f64 {
    0.15
}
fn d_grid() -> usize {
    50
}
fn d_m_max() -> usize {
    12
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default = "d_trials")]
    pub trials: usize,
    #[serde(default = "d_n")]
    pub n: usize,
    #[serde(default = "d_p")]
    pub p: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps1: Option<f64>,
    #[serde(default = "d_delta")]
    pub delta: f64,
    #[serde(default = "d_regs")]
    pub regs: Vec<Regularizer>,
    #[serde(default = "d_max_iters")]
    pub max_iters: usize,
    #[serde(default = "d_eps_opt")]
    pub epsilon_opt: f64,
    /// Informative coordinates of the planted data.
    #[serde(default = "d_support")]
    pub support: Vec<usize>,
    #[serde(default = "d_margin")]
    pub margin: f64,
    /// Width of the informative magnitude range; defaults to `1 - margin`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band: Option<f64>,
    #[serde(default)]
    pub label_noise: f64,
    /// Pairs for each Monte Carlo estimate of the true risk.
    #[serde(default = "d_mc_pairs")]
    pub mc_pairs: usize,
    #[serde(default = "d_sweep")]
    pub n_sweep: Vec<usize>,
    #[serde(default)]
    pub lambda_rule: LambdaRule,
    /// Median true risk the oracle sweep must reach at its largest `n`.
    #[serde(default = "d_threshold")]
    pub final_threshold: f64,
    #[serde(default = "d_grid")]
    pub grid_points: usize,
    /// Fixed ball radius for the reverse check; defaults to the certificate radius.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    /// Largest sample count in the exhaustive Rademacher configurations.
    #[serde(default = "d_m_max")]
    pub m_max: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind) -> Self {
        serde_json::from_value(serde_json::json!({ "kind": kind })).expect("defaults deserialize")
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidParameter("trials must be >= 1".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidParameter(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if let Some(l) = self.lambda {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::InvalidParameter(format!("lambda must be > 0, got {l}")));
            }
        }
        if self.regs.is_empty() {
            return Err(Error::InvalidParameter("regs must name at least one regularizer".into()));
        }
        if self.mc_pairs == 0 {
            return Err(Error::InvalidParameter("mc_pairs must be >= 1".into()));
        }
        Ok(())
    }

    fn lambda_or(&self, default: f64) -> f64 {
        self.lambda.unwrap_or(default)
    }

    fn solver(&self, lambda: f64, seed: u64) -> SolverConfig {
        SolverConfig::new(lambda)
            .max_iters(self.max_iters)
            .epsilon_opt(self.epsilon_opt)
            .seed(seed)
    }

    fn planted_spec(&self, n: usize, seed: u64) -> PlantedSpec {
        let mut spec = PlantedSpec::new(self.p, self.support.clone(), n, seed);
        spec.margin = self.margin;
        spec.band = self.band;
        spec.label_noise = self.label_noise;
        if self.label_noise > 0.0 {
            // noisy plants are not expected to reach zero risk
            spec.target_eps = f64::INFINITY;
        }
        spec
    }
}

/// A binomial proportion with its 95% Wilson score interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub count: usize,
    pub total: usize,
    pub rate: f64,
    pub wilson_low: f64,
    pub wilson_high: f64,
}

impl Rate {
    pub fn new(count: usize, total: usize) -> Self {
        if total == 0 {
            return Self {
                count,
                total,
                rate: 0.0,
                wilson_low: 0.0,
                wilson_high: 1.0,
            };
        }
        let z = 1.959963984540054;
        let n = total as f64;
        let ph = count as f64 / n;
        let denom = 1.0 + z * z / n;
        let centre = (ph + z * z / (2.0 * n)) / denom;
        let half = z * (ph * (1.0 - ph) / n + z * z / (4.0 * n * n)).sqrt() / denom;
        Self {
            count,
            total,
            rate: ph,
            wilson_low: if count == 0 { 0.0 } else { (centre - half).max(0.0) },
            wilson_high: if count == total { 1.0 } else { (centre + half).min(1.0) },
        }
    }
}

/// `delta + 3 sqrt(delta (1 - delta) / trials)`: the largest violation rate
/// still consistent with a true rate of `delta`.
pub fn binomial_slack(delta: f64, trials: usize) -> f64 {
    delta + 3.0 * (delta * (1.0 - delta) / trials as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub trial: usize,
    pub reg: Option<Regularizer>,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundTrial {
    pub trial: usize,
    pub reg: Regularizer,
    pub empirical_risk: f64,
    pub true_risk: f64,
    pub true_risk_stderr: f64,
    pub bound_exact: f64,
    pub bound_simplified: f64,
    /// `R - 3 stderr > R_hat + bound_exact`.
    pub violated: bool,
    pub mu_hat: Vec<f64>,
    pub iterations: usize,
    pub gap_estimate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegSummary {
    pub reg: Regularizer,
    pub lambda: f64,
    pub bounds: BoundReport,
    pub violations: Rate,
    /// Rate ceiling implied by `delta` plus binomial slack.
    pub allowed_rate: f64,
    pub within_allowed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub mu: Vec<f64>,
    pub true_risk: f64,
    pub true_risk_stderr: f64,
    pub violations: Rate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReverseSummary {
    pub reg: Regularizer,
    pub radius: f64,
    pub uniform_dev_bound: f64,
    pub bounds: BoundReport,
    pub grid: Vec<GridPoint>,
    pub max_point_rate: f64,
    pub allowed_rate: f64,
    pub within_allowed: bool,
    /// `empirical_risks[trial][point]`.
    pub empirical_risks: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRun {
    pub n: usize,
    pub seed_index: usize,
    pub lambda: f64,
    pub empirical_risk: f64,
    pub true_risk: f64,
    pub true_risk_stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSummary {
    pub reg: Regularizer,
    pub lambda_rule: LambdaRule,
    pub eps1: f64,
    pub mu_o_norm: f64,
    pub bound_scale: OracleSampleSize,
    pub trend_mode: bool,
    pub n_values: Vec<usize>,
    pub median_true_risk: Vec<f64>,
    pub strictly_decreasing: bool,
    pub final_median: f64,
    pub final_within_threshold: bool,
    pub runs: Vec<OracleRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityRun {
    pub seed_index: usize,
    pub support_l1: usize,
    pub support_l2: usize,
    pub mu_l1: Vec<f64>,
    pub mu_l2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsitySummary {
    pub lambda: f64,
    pub threshold: f64,
    pub l1_not_larger: Rate,
    pub runs: Vec<SparsityRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RademacherRun {
    pub config: usize,
    pub m: usize,
    pub p: usize,
    pub estimate_l2: f64,
    pub bound_l2: f64,
    pub estimate_l1: f64,
    pub bound_l1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RademacherSummary {
    pub l2_violations: usize,
    pub l1_violations: usize,
    pub decoupling_violations: usize,
    pub contraction_violations: usize,
    pub runs: Vec<RademacherRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ExperimentResults {
    BoundCheck {
        summaries: Vec<RegSummary>,
        trials: Vec<BoundTrial>,
    },
    ReverseBound {
        summaries: Vec<ReverseSummary>,
    },
    Oracle {
        summaries: Vec<OracleSummary>,
    },
    Sparsity(SparsitySummary),
    Rademacher(RademacherSummary),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub format_version: u32,
    pub config: ExperimentConfig,
    pub results: ExperimentResults,
    pub failures: Vec<TrialFailure>,
    pub notes: Vec<String>,
    pub runtime_secs: f64,
}

impl ExperimentReport {
    fn new(config: &ExperimentConfig, results: ExperimentResults, failures: Vec<TrialFailure>, notes: Vec<String>, start: Instant) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            config: config.clone(),
            results,
            failures,
            notes,
            runtime_secs: start.elapsed().as_secs_f64(),
        }
    }

    /// JSON with the runtime field removed, for reproducibility comparisons.
    pub fn canonical_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("report serializes");
        if let Some(o) = v.as_object_mut() {
            o.remove("runtime_secs");
        }
        v.to_string()
    }

    pub fn has_failures(&self) -> bool {
        !self.failures.is_empty()
    }

    pub fn write(&self, path: &std::path::Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    match config.kind {
        ExperimentKind::BoundCheck => run_bound_check(config),
        ExperimentKind::ReverseBound => run_reverse_bound_check(config),
        ExperimentKind::Oracle => run_oracle_experiment(config),
        ExperimentKind::Sparsity => run_sparsity_comparison(config),
        ExperimentKind::Rademacher => run_rademacher_experiment(config),
    }
}

// stream tags that keep the datasets, solvers and Monte Carlo draws of one
// trial independent of each other
const TAG_DATA: u64 = 1;
const TAG_SOLVER: u64 = 2;
const TAG_MC: u64 = 3;
const TAG_GRID: u64 = 4;

fn trial_seed(master: u64, trial: usize, tag: u64) -> u64 {
    rng::mix(rng::mix(master, tag), trial as u64)
}

fn base_plant(config: &ExperimentConfig, n: usize) -> Result<Planted> {
    gen_planted(&config.planted_spec(n, rng::mix(config.seed, TAG_DATA)))
}

fn bound_inputs(config: &ExperimentConfig, n: usize, lambda: f64, kappa: &KappaVector) -> BoundInputs {
    BoundInputs::new(n, kappa, lambda, config.delta)
}

fn odd_n_note(notes: &mut Vec<String>, n: usize) {
    if n % 2 == 1 {
        notes.push(format!("n = {n} is odd: the pairing terms use n - 1 samples"));
    }
}

/// Draws `trials` training sets, solves, and flags trials whose Monte Carlo
/// true risk exceeds empirical risk plus the exact-form bound by more than
/// three standard errors.
pub fn run_bound_check(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let start = Instant::now();
    config.validate()?;
    let plant = base_plant(config, config.n)?;
    let kappa = KappaVector::from_kernels(&plant.kernels);
    let lambda = config.lambda_or(1.0);
    let mut notes = plant.warnings.clone();
    odd_n_note(&mut notes, config.n);
    notes.push("violations are judged against the exact-form bound; the simplified form is logged".into());

    let mut summaries = Vec::new();
    let mut trials = Vec::new();
    let mut failures = Vec::new();
    for &reg in &config.regs {
        let bounds = BoundReport::compute(bound_inputs(config, config.n, lambda, &kappa), reg, BoundForm::Exact)?;
        notes.extend(bounds.warnings.iter().map(|w| format!("{reg}: {w}")));
        let (exact, simplified) = match reg {
            Regularizer::L2 => (bounds.gen_l2_exact, bounds.gen_l2_simplified),
            Regularizer::L1 => (bounds.gen_l1_exact, bounds.gen_l1_simplified),
        };
        let outcomes: Vec<Result<BoundTrial>> = (0..config.trials)
            .into_par_iter()
            .map(|t| {
                let sampler = plant.sampler(trial_seed(config.seed, t, TAG_DATA));
                let data = sampler.draw_dataset(config.n, 0)?;
                let sol = solve(reg, &data, &plant.kernels, &config.solver(lambda, trial_seed(config.seed, t, TAG_SOLVER)))?;
                let mc = sampler.with_seed(trial_seed(config.seed, t, TAG_MC));
                let est = true_risk_mc(&sol.mu_hat, &mc, &plant.kernels, config.mc_pairs)?;
                Ok(BoundTrial {
                    trial: t,
                    reg,
                    empirical_risk: sol.empirical_risk,
                    true_risk: est.value,
                    true_risk_stderr: est.stderr,
                    bound_exact: exact,
                    bound_simplified: simplified,
                    violated: est.value - 3.0 * est.stderr > sol.empirical_risk + exact,
                    mu_hat: sol.mu_hat.into_inner(),
                    iterations: sol.iterations,
                    gap_estimate: sol.gap_estimate,
                })
            })
            .collect();
        let mut ok = Vec::new();
        for (t, o) in outcomes.into_iter().enumerate() {
            match o {
                Ok(rec) => ok.push(rec),
                Err(e) => failures.push(TrialFailure {
                    trial: t,
                    reg: Some(reg),
                    error: e.to_string(),
                }),
            }
        }
        let violations = Rate::new(ok.iter().filter(|r| r.violated).count(), ok.len());
        let allowed_rate = binomial_slack(config.delta, config.trials);
        summaries.push(RegSummary {
            reg,
            lambda,
            bounds,
            within_allowed: violations.rate <= allowed_rate,
            violations,
            allowed_rate,
        });
        trials.extend(ok);
    }
    Ok(ExperimentReport::new(
        config,
        ExperimentResults::BoundCheck { summaries, trials },
        failures,
        notes,
        start,
    ))
}

/// `count` deterministic points of the nonnegative part of the ball, the
/// first being the origin.
fn ball_grid(reg: Regularizer, radius: f64, p: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng::stream(seed, 0);
    let mut grid = vec![vec![0.0; p]];
    while grid.len() < count {
        let dir: Vec<f64> = (0..p).map(|_| -r.gen::<f64>().max(1e-300).ln()).collect();
        let norm = match reg {
            Regularizer::L2 => dir.iter().map(|v| v * v).sum::<f64>().sqrt(),
            Regularizer::L1 => dir.iter().sum::<f64>(),
        };
        let scale = radius * r.gen::<f64>().powf(1.0 / p as f64) / norm;
        grid.push(dir.iter().map(|v| v * scale).collect());
    }
    grid.truncate(count.max(1));
    grid
}

/// For a fixed grid of combinations in a ball, flags training draws where the
/// empirical risk exceeds the true risk by more than the uniform deviation
/// bound (plus three Monte Carlo standard errors).
pub fn run_reverse_bound_check(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let start = Instant::now();
    config.validate()?;
    let plant = base_plant(config, config.n)?;
    let kappa = KappaVector::from_kernels(&plant.kernels);
    let lambda = config.lambda_or(1.0);
    let mut notes = plant.warnings.clone();
    odd_n_note(&mut notes, config.n);
    let mut failures = Vec::new();
    let mut summaries = Vec::new();
    for &reg in &config.regs {
        let radius = config.radius.unwrap_or(reg.radius(lambda));
        let mut inputs = bound_inputs(config, config.n, lambda, &kappa);
        inputs.r = Some(radius);
        inputs.s = Some(radius);
        let bounds = BoundReport::compute(inputs, reg, BoundForm::Exact)?;
        let dev = match reg {
            Regularizer::L2 => bounds.uniform_dev_l2,
            Regularizer::L1 => bounds.uniform_dev_l1,
        };
        let grid = ball_grid(reg, radius, config.p, config.grid_points, rng::mix(config.seed, TAG_GRID));
        let truths = grid
            .par_iter()
            .enumerate()
            .map(|(g, mu)| {
                let mc = plant.sampler(trial_seed(config.seed, g, TAG_MC));
                true_risk_mc(mu, &mc, &plant.kernels, config.mc_pairs)
            })
            .collect::<Result<Vec<_>>>()?;
        let outcomes: Vec<Result<Vec<f64>>> = (0..config.trials)
            .into_par_iter()
            .map(|t| {
                let data = plant.sampler(trial_seed(config.seed, t, TAG_DATA)).draw_dataset(config.n, 0)?;
                let pairs = PairSet::build(&data, &plant.kernels, trial_seed(config.seed, t, TAG_SOLVER))?;
                grid.iter().map(|mu| pairs.risk(mu)).collect()
            })
            .collect();
        let mut risks = Vec::new();
        for (t, o) in outcomes.into_iter().enumerate() {
            match o {
                Ok(r) => risks.push(r),
                Err(e) => failures.push(TrialFailure {
                    trial: t,
                    reg: Some(reg),
                    error: e.to_string(),
                }),
            }
        }
        let points: Vec<GridPoint> = grid
            .iter()
            .zip(&truths)
            .enumerate()
            .map(|(g, (mu, est))| {
                let count = risks
                    .iter()
                    .filter(|r| r[g] - est.value - 3.0 * est.stderr > dev)
                    .count();
                GridPoint {
                    mu: mu.clone(),
                    true_risk: est.value,
                    true_risk_stderr: est.stderr,
                    violations: Rate::new(count, risks.len()),
                }
            })
            .collect();
        let max_point_rate = points.iter().map(|g| g.violations.rate).fold(0.0, f64::max);
        let allowed_rate = binomial_slack(config.delta, config.trials);
        summaries.push(ReverseSummary {
            reg,
            radius,
            uniform_dev_bound: dev,
            bounds,
            grid: points,
            max_point_rate,
            allowed_rate,
            within_allowed: max_point_rate <= allowed_rate,
            empirical_risks: risks,
        });
    }
    Ok(ExperimentReport::new(
        config,
        ExperimentResults::ReverseBound { summaries },
        failures,
        notes,
        start,
    ))
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let k = values.len();
    if k % 2 == 1 {
        values[k / 2]
    } else {
        0.5 * (values[k / 2 - 1] + values[k / 2])
    }
}

/// Largest `n` the oracle sweep will attempt before falling back to trend
/// mode.
pub const DESK_SCALE_N: u64 = 20_000;

/// Plants `mu_o`, sets `lambda` by the configured rule for each `n` of the
/// sweep, and records the median Monte Carlo true risk of the solution over
/// `trials` seeds.
pub fn run_oracle_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let start = Instant::now();
    config.validate()?;
    if config.n_sweep.is_empty() {
        return Err(Error::InvalidParameter("n_sweep is empty".into()));
    }
    let eps1 = config.eps1.unwrap_or(0.1);
    let probe = base_plant(config, 2)?;
    let kappa = KappaVector::from_kernels(&probe.kernels);
    let mut notes = probe.warnings.clone();
    let mut failures = Vec::new();
    let mut summaries = Vec::new();
    for &reg in &config.regs {
        let (mu_norm, bound_scale) = match reg {
            Regularizer::L2 => {
                let norm = probe.mu_o.l2();
                (norm, oracle_sample_size_l2(norm, kappa.l2(), eps1, config.delta)?)
            }
            Regularizer::L1 => {
                let norm = probe.mu_o.l1();
                (norm, oracle_sample_size_l1(norm, kappa.linf(), eps1, config.delta, config.p)?)
            }
        };
        let max_n = *config.n_sweep.iter().max().expect("nonempty sweep") as u64;
        let trend_mode = bound_scale.n > DESK_SCALE_N || bound_scale.n > max_n;
        if trend_mode {
            notes.push(format!(
                "{reg}: bound-scale n = {} infeasible; running trend mode over n = {:?}",
                bound_scale.n, config.n_sweep
            ));
        }
        notes.extend(bound_scale.warnings.iter().map(|w| format!("{reg}: {w}")));
        let lambda_for = |n: usize| match config.lambda_rule {
            LambdaRule::Planted => bound_scale.lambda,
            LambdaRule::Oblivious => oblivious_lambda(n),
            LambdaRule::Fixed => config.lambda_or(bound_scale.lambda),
        };
        let jobs: Vec<(usize, usize)> = config
            .n_sweep
            .iter()
            .flat_map(|&n| (0..config.trials).map(move |s| (n, s)))
            .collect();
        let outcomes: Vec<Result<OracleRun>> = jobs
            .par_iter()
            .map(|&(n, s)| {
                let lambda = lambda_for(n);
                let sampler = probe.sampler(trial_seed(config.seed, s, TAG_DATA));
                // same stream for every n, so smaller samples are prefixes of larger ones
                let data = sampler.draw_dataset(n, 0)?;
                let sol = solve(reg, &data, &probe.kernels, &config.solver(lambda, trial_seed(config.seed, s, TAG_SOLVER)))?;
                let mc = sampler.with_seed(trial_seed(config.seed, s, TAG_MC));
                let est = true_risk_mc(&sol.mu_hat, &mc, &probe.kernels, config.mc_pairs)?;
                Ok(OracleRun {
                    n,
                    seed_index: s,
                    lambda,
                    empirical_risk: sol.empirical_risk,
                    true_risk: est.value,
                    true_risk_stderr: est.stderr,
                })
            })
            .collect();
        let mut runs = Vec::new();
        for (k, o) in outcomes.into_iter().enumerate() {
            match o {
                Ok(r) => runs.push(r),
                Err(e) => failures.push(TrialFailure {
                    trial: jobs[k].1,
                    reg: Some(reg),
                    error: format!("n = {}: {e}", jobs[k].0),
                }),
            }
        }
        let median_true_risk: Vec<f64> = config
            .n_sweep
            .iter()
            .map(|&n| {
                let mut v: Vec<f64> = runs.iter().filter(|r| r.n == n).map(|r| r.true_risk).collect();
                median(&mut v)
            })
            .collect();
        let final_median = *median_true_risk.last().expect("nonempty sweep");
        summaries.push(OracleSummary {
            reg,
            lambda_rule: config.lambda_rule,
            eps1,
            mu_o_norm: mu_norm,
            bound_scale,
            trend_mode,
            n_values: config.n_sweep.clone(),
            strictly_decreasing: median_true_risk.windows(2).all(|w| w[1] < w[0]),
            final_within_threshold: final_median <= config.final_threshold,
            final_median,
            median_true_risk,
            runs,
        });
    }
    Ok(ExperimentReport::new(config, ExperimentResults::Oracle { summaries }, failures, notes, start))
}

/// Relative threshold below which a coordinate of `mu_hat` counts as zero.
pub const SUPPORT_THRESHOLD: f64 = 1e-3;

/// Absolute floor under which a coordinate counts as zero regardless of the
/// relative threshold, so that a solution shrunk to O(1/lambda) by a huge
/// `lambda` has empty support.
pub const SUPPORT_FLOOR: f64 = 1e-6;

pub fn support_size(mu: &[f64]) -> usize {
    let l1: f64 = mu.iter().sum();
    mu.iter().filter(|&&v| v > SUPPORT_FLOOR && v > SUPPORT_THRESHOLD * l1).count()
}

/// Compares support sizes of the L1 and L2 solutions on planted sparse data.
pub fn run_sparsity_comparison(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let start = Instant::now();
    config.validate()?;
    let lambda = config.lambda_or(0.1);
    let probe = base_plant(config, 2)?;
    let notes = probe.warnings.clone();
    let outcomes: Vec<Result<SparsityRun>> = (0..config.trials)
        .into_par_iter()
        .map(|s| {
            let data = probe.sampler(trial_seed(config.seed, s, TAG_DATA)).draw_dataset(config.n, 0)?;
            let cfg = config.solver(lambda, trial_seed(config.seed, s, TAG_SOLVER));
            let l1 = solve(Regularizer::L1, &data, &probe.kernels, &cfg)?;
            let l2 = solve(Regularizer::L2, &data, &probe.kernels, &cfg)?;
            Ok(SparsityRun {
                seed_index: s,
                support_l1: support_size(&l1.mu_hat),
                support_l2: support_size(&l2.mu_hat),
                mu_l1: l1.mu_hat.into_inner(),
                mu_l2: l2.mu_hat.into_inner(),
            })
        })
        .collect();
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (s, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(r) => runs.push(r),
            Err(e) => failures.push(TrialFailure {
                trial: s,
                reg: None,
                error: e.to_string(),
            }),
        }
    }
    let wins = runs.iter().filter(|r| r.support_l1 <= r.support_l2).count();
    let summary = SparsitySummary {
        lambda,
        threshold: SUPPORT_THRESHOLD,
        l1_not_larger: Rate::new(wins, runs.len()),
        runs,
    };
    Ok(ExperimentReport::new(config, ExperimentResults::Sparsity(summary), failures, notes, start))
}

/// Random K-space samples with `|z_j| <= kappa_j`, drawn uniformly.
pub fn random_kspace_sample(r: &mut rng::Rng, m: usize, kappa: &[f64]) -> Vec<Vec<f64>> {
    (0..m)
        .map(|_| kappa.iter().map(|&k| r.gen_range(-k..=k)).collect())
        .collect()
}

/// A random symmetric pair-feature table over a support of size `k`.
pub fn random_pair_table(r: &mut rng::Rng, k: usize, p: usize) -> Result<PairFeatureTable> {
    let mut w: Vec<f64> = (0..k).map(|_| r.gen_range(0.05..1.0)).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    let values: Vec<Vec<f64>> = (0..k * k).map(|_| (0..p).map(|_| r.gen_range(-1.0..=1.0)).collect()).collect();
    PairFeatureTable::from_fn(w, p, |a, b| values[a.min(b) * k + a.max(b)].clone())
}

/// Exhaustive empirical Rademacher averages against the closed-form bounds,
/// plus randomized exhaustive decoupling and contraction instances.
pub fn run_rademacher_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let start = Instant::now();
    config.validate()?;
    let m_max = config.m_max.clamp(1, crate::bounds::MAX_EXHAUSTIVE_SIGNS);
    let outcomes: Vec<Result<(RademacherRun, bool, bool)>> = (0..config.trials)
        .into_par_iter()
        .map(|c| {
            let mut r = rng::stream(config.seed, c as u64);
            let m = r.gen_range(1..=m_max);
            let p = r.gen_range(3..=10);
            let kappa: Vec<f64> = (0..p).map(|_| r.gen_range(0.2..=2.0)).collect();
            let kv = KappaVector::new(kappa.clone())?;
            let z = random_kspace_sample(&mut r, m, &kappa);
            let radius = r.gen_range(0.1..=5.0);
            let est_l2 = empirical_rademacher(&z, Ball::L2(radius), false, Expectation::Exhaustive)?;
            let est_l1 = empirical_rademacher(&z, Ball::L1(radius), false, Expectation::Exhaustive)?;
            let run = RademacherRun {
                config: c,
                m,
                p,
                estimate_l2: est_l2.value,
                bound_l2: rad_bound_l2(radius, kv.l2(), 2 * m)?,
                estimate_l1: est_l1.value,
                bound_l1: rad_bound_l1(radius, kv.linf(), 2 * m, p)?,
            };

            let (k, fp) = (r.gen_range(2..=3), r.gen_range(1..=4));
            let table = random_pair_table(&mut r, k, fp)?;
            let n = 2 * r.gen_range(1..=3);
            let ball = if r.gen::<bool>() { Ball::L2(radius) } else { Ball::L1(radius) };
            let dec = check_decoupling(&table, ball, r.gen::<bool>(), n, Expectation::Exhaustive)?;

            let pts = r.gen_range(1..=8);
            let hyps = r.gen_range(1..=6);
            let h: Vec<Vec<f64>> = (0..pts).map(|_| (0..hyps).map(|_| r.gen_range(-2.0..=2.0)).collect()).collect();
            let a: Vec<f64> = (0..pts).map(|_| if r.gen::<bool>() { 1.0 } else { -1.0 }).collect();
            let con = check_contraction(&h, &a, Expectation::Exhaustive)?;
            Ok((run, dec.holds, con.holds))
        })
        .collect();
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    let (mut dec_bad, mut con_bad) = (0, 0);
    for (c, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok((run, dec, con)) => {
                dec_bad += usize::from(!dec);
                con_bad += usize::from(!con);
                runs.push(run);
            }
            Err(e) => failures.push(TrialFailure {
                trial: c,
                reg: None,
                error: e.to_string(),
            }),
        }
    }
    let summary = RademacherSummary {
        l2_violations: runs.iter().filter(|r| r.estimate_l2 > r.bound_l2 + 1e-12).count(),
        l1_violations: runs.iter().filter(|r| r.estimate_l1 > r.bound_l1 + 1e-12).count(),
        decoupling_violations: dec_bad,
        contraction_violations: con_bad,
        runs,
    };
    let notes = vec![
        "K-space samples are drawn uniformly from the kappa box; adversarial sign-cube samples can exceed the L1 formula".into(),
    ];
    Ok(ExperimentReport::new(config, ExperimentResults::Rademacher(summary), failures, notes, start))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(kind: ExperimentKind) -> ExperimentConfig {
        let mut c = ExperimentConfig::new(kind);
        c.trials = 3;
        c.n = 30;
        c.p = 3;
        c.max_iters = 200;
        c.mc_pairs = 2000;
        c.grid_points = 5;
        c.n_sweep = vec![20, 40];
        c.seed = 9;
        c
    }

    #[test]
    fn wilson_interval_brackets_rate() {
        let r = Rate::new(0, 200);
        assert_eq!(r.rate, 0.0);
        assert_eq!(r.wilson_low, 0.0);
        assert!(r.wilson_high > 0.0 && r.wilson_high < 0.03);
        let r = Rate::new(50, 100);
        assert!(r.wilson_low < 0.5 && r.wilson_high > 0.5);
        assert!((binomial_slack(0.1, 200) - 0.16364).abs() < 1e-4);
    }

    #[test]
    fn config_defaults_and_validation() {
        let c: ExperimentConfig = serde_json::from_str(r#"{"kind":"bound-check","trials":5}"#).unwrap();
        assert_eq!((c.trials, c.n, c.p, c.mc_pairs), (5, 200, 5, 100_000));
        assert_eq!("reverse-bound".parse::<ExperimentKind>().unwrap(), ExperimentKind::ReverseBound);
        assert!("nope".parse::<ExperimentKind>().is_err());
        let mut bad = c.clone();
        bad.trials = 0;
        assert!(bad.validate().is_err());
        bad.trials = 1;
        bad.delta = 1.0;
        assert!(bad.validate().is_err());
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"kind":"oracle","bogus":1}"#).is_err());
    }

    #[test]
    fn bound_check_is_reproducible() {
        let c = small(ExperimentKind::BoundCheck);
        let a = run_bound_check(&c).unwrap();
        let b = run_bound_check(&c).unwrap();
        assert_eq!(a.canonical_json(), b.canonical_json());
        assert_eq!(a.format_version, 1);
        let ExperimentResults::BoundCheck { summaries, trials } = &a.results else { panic!() };
        assert_eq!(trials.len(), 6);
        for s in summaries {
            let flagged = trials.iter().filter(|t| t.reg == s.reg && t.violated).count();
            assert_eq!(s.violations.count, flagged);
            assert_eq!(s.violations.rate, flagged as f64 / 3.0);
        }
    }

    #[test]
    fn huge_lambda_never_violates() {
        let mut c = small(ExperimentKind::BoundCheck);
        c.lambda = Some(1e8);
        let rep = run_bound_check(&c).unwrap();
        let ExperimentResults::BoundCheck { trials, .. } = &rep.results else { panic!() };
        for t in trials {
            assert!(t.mu_hat.iter().all(|&v| v < 1e-3), "{t:?}");
            assert!((t.empirical_risk - 1.0).abs() < 1e-2);
            assert!(!t.violated);
        }
    }

    #[test]
    fn reverse_check_zero_radius() {
        let mut c = small(ExperimentKind::ReverseBound);
        c.radius = Some(0.0);
        let rep = run_reverse_bound_check(&c).unwrap();
        let ExperimentResults::ReverseBound { summaries } = &rep.results else { panic!() };
        for s in summaries {
            assert_eq!(s.max_point_rate, 0.0);
            for g in &s.grid {
                assert_eq!(g.true_risk, 1.0);
                assert!(g.mu.iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn oracle_reports_trend_mode() {
        let mut c = small(ExperimentKind::Oracle);
        c.regs = vec![Regularizer::L2];
        let rep = run_oracle_experiment(&c).unwrap();
        let ExperimentResults::Oracle { summaries } = &rep.results else { panic!() };
        assert!(summaries[0].trend_mode);
        assert!(rep.notes.iter().any(|n| n.contains("bound-scale n") && n.contains("trend mode")));
        assert_eq!(summaries[0].runs.len(), 6);
    }

    #[test]
    fn sparsity_degenerate_cases() {
        let mut c = small(ExperimentKind::Sparsity);
        c.p = 1;
        let rep = run_sparsity_comparison(&c).unwrap();
        let ExperimentResults::Sparsity(s) = &rep.results else { panic!() };
        assert!(s.runs.iter().all(|r| r.support_l1 == 1 && r.support_l2 == 1));
        c.lambda = Some(1e8);
        let rep = run_sparsity_comparison(&c).unwrap();
        let ExperimentResults::Sparsity(s) = &rep.results else { panic!() };
        assert!(s.runs.iter().all(|r| r.support_l1 == 0 && r.support_l2 == 0), "{s:?}");
    }

    #[test]
    fn rademacher_experiment_runs_clean() {
        let mut c = small(ExperimentKind::Rademacher);
        c.trials = 20;
        c.m_max = 8;
        let rep = run_rademacher_experiment(&c).unwrap();
        let ExperimentResults::Rademacher(s) = &rep.results else { panic!() };
        assert_eq!(s.runs.len(), 20);
        assert_eq!(s.l2_violations + s.decoupling_violations + s.contraction_violations, 0);
    }
}
