//! Projected subgradient solvers for
//!
//! ```text
//! L2:  min_{mu >= 0} (lambda/2) ||mu||_2^2 + R_hat(mu)
//! L1:  min_{mu >= 0} (lambda/2) ||mu||_1   + R_hat(mu)
//! ```
//!
//! Since `R_hat(0) = 1`, every minimizer lies in the certificate ball
//! `||mu||_2 <= sqrt(2/lambda)` (L2) or `||mu||_1 <= 2/lambda` (L1). Iterates
//! are projected onto the nonnegative part of that ball, which leaves the
//! minimizer unchanged and makes the certificate hold for every returned
//! point, converged or not.
//!
//! Optimality is certified by a lower bound built from the averaged
//! linearizations `R_hat(mu_t) + <g_t, mu - mu_t>` collected over each
//! averaging window: the average of those affine minorants plus the
//! regularizer is minimized in closed form over the feasible set.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::kernels::{dot, kspace_features, BaseKernel, CombinationVector, KSpacePair, KappaVector};
use crate::risk::{hinge_pass, pair_count, LabeledDataset, PairSet, MAX_FULL_PAIRS};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regularizer {
    L2,
    L1,
}

impl std::fmt::Display for Regularizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Regularizer::L2 => "l2",
            Regularizer::L1 => "l1",
        })
    }
}

impl std::str::FromStr for Regularizer {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" | "L2" => Ok(Regularizer::L2),
            "l1" | "L1" => Ok(Regularizer::L1),
            other => Err(Error::InvalidParameter(format!("unknown regularizer {other:?}"))),
        }
    }
}

impl Regularizer {
    /// `r_lambda = sqrt(2/lambda)` for L2, `s_lambda = 2/lambda` for L1.
    pub fn radius(self, lambda: f64) -> f64 {
        match self {
            Regularizer::L2 => (2.0 / lambda).sqrt(),
            Regularizer::L1 => 2.0 / lambda,
        }
    }

    pub fn penalty(self, lambda: f64, mu: &[f64]) -> f64 {
        match self {
            Regularizer::L2 => 0.5 * lambda * dot(mu, mu),
            Regularizer::L1 => 0.5 * lambda * mu.iter().map(|v| v.abs()).sum::<f64>(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepSchedule {
    /// `eta_t = 1 / (lambda (t + 1))`
    StronglyConvex,
    /// `eta_t = D / (G sqrt(t + 1))` with `D` the certificate radius and `G`
    /// a bound on the objective subgradient norm.
    SqrtDecay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Averaging {
    #[default]
    SuffixHalf,
    FinalIterate,
}

fn default_max_iters() -> usize {
    200_000
}
fn default_eps() -> f64 {
    1e-6
}
fn default_minibatch() -> usize {
    4096
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub lambda: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_eps")]
    pub epsilon_opt: f64,
    #[serde(default)]
    pub seed: u64,
    /// Defaults to strongly-convex for L2 and sqrt-decay for L1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_schedule: Option<StepSchedule>,
    #[serde(default)]
    pub averaging: Averaging,
    /// Pairs per iteration when the pair set is too large to enumerate.
    #[serde(default = "default_minibatch")]
    pub minibatch: usize,
}

impl SolverConfig {
    pub fn new(lambda: f64) -> Self {
        Self {
            lambda,
            max_iters: default_max_iters(),
            epsilon_opt: default_eps(),
            seed: 0,
            step_schedule: None,
            averaging: Averaging::SuffixHalf,
            minibatch: default_minibatch(),
        }
    }

    pub fn max_iters(mut self, iters: usize) -> Self {
        self.max_iters = iters;
        self
    }

    pub fn epsilon_opt(mut self, eps: f64) -> Self {
        self.epsilon_opt = eps;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn schedule(mut self, s: StepSchedule) -> Self {
        self.step_schedule = Some(s);
        self
    }

    pub fn averaging(mut self, a: Averaging) -> Self {
        self.averaging = a;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be > 0 (no radius certificate otherwise), got {}",
                self.lambda
            )));
        }
        if !(self.epsilon_opt > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "epsilon_opt must be > 0, got {}",
                self.epsilon_opt
            )));
        }
        if self.minibatch == 0 {
            return Err(Error::InvalidParameter("minibatch must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub mu_hat: CombinationVector,
    pub regularizer: Regularizer,
    pub lambda: f64,
    pub objective: f64,
    pub empirical_risk: f64,
    pub iterations: usize,
    pub radius_certificate: f64,
    /// `objective - lower bound`; `None` if no checkpoint was reached.
    pub gap_estimate: Option<f64>,
    pub converged: bool,
    /// Minibatch iterations; the gap is then an estimate, not a certificate.
    pub stochastic: bool,
    /// The empirical risk was evaluated on a pair subsample.
    pub subsampled: bool,
}

/// `(lambda/2) ||mu||_2^2 + R_hat(mu)`.
pub fn objective_l2(mu: &[f64], data: &LabeledDataset, kernels: &[BaseKernel], lambda: f64) -> Result<f64> {
    objective(Regularizer::L2, mu, data, kernels, lambda)
}

/// `(lambda/2) ||mu||_1 + R_hat(mu)`.
pub fn objective_l1(mu: &[f64], data: &LabeledDataset, kernels: &[BaseKernel], lambda: f64) -> Result<f64> {
    objective(Regularizer::L1, mu, data, kernels, lambda)
}

pub fn objective(
    reg: Regularizer,
    mu: &[f64],
    data: &LabeledDataset,
    kernels: &[BaseKernel],
    lambda: f64,
) -> Result<f64> {
    check_len(kernels.len(), mu.len())?;
    let pairs = PairSet::build(data, kernels, 0)?;
    Ok(reg.penalty(lambda, mu) + pairs.risk(mu)?)
}

/// Average over `pairs` of `-yy' z` where the margin `yy' <mu, z>` is below 1.
pub fn subgradient_risk(mu: &[f64], pairs: &[KSpacePair]) -> Result<Vec<f64>> {
    if pairs.is_empty() {
        return Err(Error::EmptyData);
    }
    let set = PairSet::from_pairs(pairs)?;
    check_len(set.dim(), mu.len())?;
    let mut g = vec![0.0; mu.len()];
    set.risk_and_subgradient(mu, &mut g);
    Ok(g)
}

/// Componentwise `max(v, 0)`: the projection onto the nonnegative orthant.
pub fn project_nonneg(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect()
}

/// Projection onto `{mu >= 0, ||mu||_2 <= radius}` (L2) or
/// `{mu >= 0, sum mu <= radius}` (L1), in place.
pub fn project_feasible(reg: Regularizer, radius: f64, v: &mut [f64]) {
    for x in v.iter_mut() {
        if !(*x > 0.0) {
            *x = 0.0;
        }
    }
    match reg {
        Regularizer::L2 => {
            let norm = dot(v, v).sqrt();
            if norm > radius {
                let s = radius / norm;
                v.iter_mut().for_each(|x| *x *= s);
            }
        }
        Regularizer::L1 => {
            let sum: f64 = v.iter().sum();
            if sum > radius {
                let mut sorted = v.to_vec();
                sorted.sort_unstable_by(|a, b| b.total_cmp(a));
                let mut acc = 0.0;
                let mut theta = 0.0;
                for (k, &u) in sorted.iter().enumerate() {
                    acc += u;
                    let t = (acc - radius) / (k + 1) as f64;
                    if u - t > 0.0 {
                        theta = t;
                    } else {
                        break;
                    }
                }
                v.iter_mut().for_each(|x| *x = (*x - theta).max(0.0));
            }
        }
    }
}

/// Minimum over the feasible set of `c + <g, mu> + penalty(mu)`.
fn model_minimum(reg: Regularizer, lambda: f64, radius: f64, c: f64, g: &[f64]) -> f64 {
    match reg {
        Regularizer::L2 => {
            let neg: f64 = g.iter().map(|&v| if v < 0.0 { v * v } else { 0.0 }).sum::<f64>().sqrt();
            let rho = (neg / lambda).min(radius);
            c - rho * neg + 0.5 * lambda * rho * rho
        }
        Regularizer::L1 => {
            let worst = g
                .iter()
                .map(|&v| 0.5 * lambda + v)
                .fold(f64::INFINITY, f64::min);
            c + radius * worst.min(0.0)
        }
    }
}

pub fn solve_l2(data: &LabeledDataset, kernels: &[BaseKernel], config: &SolverConfig) -> Result<SolveResult> {
    solve(Regularizer::L2, data, kernels, config)
}

pub fn solve_l1(data: &LabeledDataset, kernels: &[BaseKernel], config: &SolverConfig) -> Result<SolveResult> {
    solve(Regularizer::L1, data, kernels, config)
}

pub fn solve(
    reg: Regularizer,
    data: &LabeledDataset,
    kernels: &[BaseKernel],
    config: &SolverConfig,
) -> Result<SolveResult> {
    config.validate()?;
    let n = data.len();
    if n < 2 {
        return Err(Error::TooFewSamples {
            required: 2,
            actual: n,
        });
    }
    let pairs = PairSet::build(data, kernels, config.seed)?;
    let kappa = KappaVector::from_kernels(kernels);
    if pair_count(n) <= MAX_FULL_PAIRS {
        return solve_pairs(reg, &pairs, &kappa, config);
    }

    // Fresh minibatch of distinct-index pairs per iteration.
    let p = kernels.len();
    let batch = config.minibatch;
    let mut r = rng::stream(config.seed, 1);
    let mut signed = vec![0.0; batch * p];
    let mut row = vec![0.0; p];
    let mut failure = None;
    let oracle = |mu: &[f64], grad: &mut [f64]| -> f64 {
        for slot in signed.chunks_exact_mut(p) {
            let i = r.gen_range(0..n);
            let mut j = r.gen_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            let ((xi, yi), (xj, yj)) = (data.point(i), data.point(j));
            if let Err(e) = kspace_features(kernels, xi, xj, &mut row) {
                failure.get_or_insert(e);
            }
            let s = yi * yj;
            slot.iter_mut().zip(&row).for_each(|(o, v)| *o = s * v);
        }
        hinge_pass(p, &signed, mu, grad)
    };
    let mut result = run(reg, &pairs, &kappa, config, oracle)?;
    if let Some(e) = failure {
        return Err(e);
    }
    result.stochastic = true;
    Ok(result)
}

/// Solves over a prebuilt pair set with full-batch subgradients.
pub fn solve_pairs(
    reg: Regularizer,
    pairs: &PairSet,
    kappa: &KappaVector,
    config: &SolverConfig,
) -> Result<SolveResult> {
    config.validate()?;
    check_len(kappa.len(), pairs.dim())?;
    if pairs.is_empty() {
        return Err(Error::EmptyData);
    }
    run(reg, pairs, kappa, config, |mu, g| pairs.risk_and_subgradient(mu, g))
}

fn run<F>(
    reg: Regularizer,
    eval_pairs: &PairSet,
    kappa: &KappaVector,
    config: &SolverConfig,
    mut oracle: F,
) -> Result<SolveResult>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let p = kappa.len();
    let lambda = config.lambda;
    let radius = reg.radius(lambda);
    let g_bound = match reg {
        Regularizer::L2 => lambda * radius + kappa.l2(),
        Regularizer::L1 => 0.5 * lambda * (p as f64).sqrt() + kappa.l2(),
    };
    let schedule = config.step_schedule.unwrap_or(match reg {
        Regularizer::L2 => StepSchedule::StronglyConvex,
        Regularizer::L1 => StepSchedule::SqrtDecay,
    });
    let step = |t: usize| match schedule {
        StepSchedule::StronglyConvex => 1.0 / (lambda * (t + 1) as f64),
        StepSchedule::SqrtDecay => radius / (g_bound * ((t + 1) as f64).sqrt()),
    };

    let mut scratch = vec![0.0; p];
    let mut objective_of = |mu: &[f64]| reg.penalty(lambda, mu) + eval_pairs.risk_and_subgradient(mu, &mut scratch);

    let mut mu = vec![0.0; p];
    let mut best_mu = vec![0.0; p];
    let mut best_obj = objective_of(&best_mu);
    let mut lower = f64::NEG_INFINITY;

    let mut grad = vec![0.0; p];
    let mut win_mu = vec![0.0; p];
    let mut win_g = vec![0.0; p];
    let mut win_c = 0.0;
    let mut win_len = 0usize;
    let mut checkpoint = 64.min(config.max_iters);
    let mut iterations = 0;
    let mut converged = false;

    for t in 0..config.max_iters {
        let risk = oracle(&mu, &mut grad);
        win_c += risk - dot(&grad, &mu);
        win_g.iter_mut().zip(&grad).for_each(|(w, g)| *w += g);

        for i in 0..p {
            let d = match reg {
                Regularizer::L2 => lambda * mu[i] + grad[i],
                Regularizer::L1 => 0.5 * lambda + grad[i],
            };
            mu[i] -= step(t) * d;
        }
        project_feasible(reg, radius, &mut mu);
        win_mu.iter_mut().zip(&mu).for_each(|(w, m)| *w += m);
        win_len += 1;
        iterations = t + 1;

        if iterations == checkpoint {
            let k = win_len as f64;
            let mut candidates = vec![mu.clone()];
            if config.averaging == Averaging::SuffixHalf {
                let mut avg: Vec<f64> = win_mu.iter().map(|s| s / k).collect();
                project_feasible(reg, radius, &mut avg);
                candidates.push(avg);
            }
            for c in candidates {
                let obj = objective_of(&c);
                if obj < best_obj {
                    best_obj = obj;
                    best_mu = c;
                }
            }
            let g_avg: Vec<f64> = win_g.iter().map(|s| s / k).collect();
            lower = lower.max(model_minimum(reg, lambda, radius, win_c / k, &g_avg));
            if best_obj - lower <= config.epsilon_opt {
                converged = true;
                break;
            }
            win_mu.iter_mut().for_each(|w| *w = 0.0);
            win_g.iter_mut().for_each(|w| *w = 0.0);
            win_c = 0.0;
            win_len = 0;
            checkpoint = (checkpoint * 2).min(config.max_iters);
        }
    }

    let empirical_risk = eval_pairs.risk(&best_mu)?;
    let objective = reg.penalty(lambda, &best_mu) + empirical_risk;
    let gap_estimate = lower.is_finite().then(|| (objective - lower).max(0.0));
    if !converged {
        log::debug!(
            "{reg} solver stopped after {iterations} iterations, gap estimate {gap_estimate:?}"
        );
    }
    Ok(SolveResult {
        mu_hat: CombinationVector::new(best_mu)?,
        regularizer: reg,
        lambda,
        objective,
        empirical_risk,
        iterations,
        radius_certificate: radius,
        gap_estimate,
        converged,
        stochastic: false,
        subsampled: eval_pairs.is_subsampled(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::kspace_map;

    fn f1() -> (LabeledDataset, Vec<BaseKernel>) {
        let data = LabeledDataset::new(
            vec![vec![1.0], vec![-1.0], vec![0.5]],
            vec![1.0, -1.0, 1.0],
        )
        .unwrap();
        let ks = vec![BaseKernel::linear(1.0).unwrap(), BaseKernel::rbf(1.0).unwrap()];
        (data, ks)
    }

    #[test]
    fn objective_examples() {
        let (d, ks) = f1();
        assert_eq!(objective_l2(&[0.0, 0.0], &d, &ks, 3.0).unwrap(), 1.0);
        assert!((objective_l2(&[1.0, 0.0], &d, &ks, 1.0).unwrap() - 5.0 / 6.0).abs() < 1e-15);
        assert!((objective_l2(&[2.0, 0.0], &d, &ks, 0.1).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(objective_l1(&[0.0, 0.0], &d, &ks, 3.0).unwrap(), 1.0);
        assert!((objective_l1(&[1.0, 0.0], &d, &ks, 1.0).unwrap() - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(objective_l1(&[2.0, 0.0], &d, &ks, 1.0).unwrap(), 1.0);
        assert!(objective_l2(&[1.0], &d, &ks, 1.0).is_err());
    }

    #[test]
    fn subgradient_examples() {
        let (d, ks) = f1();
        let pairs: Vec<KSpacePair> = [(0, 1), (0, 2), (1, 2)]
            .iter()
            .map(|&(i, j)| kspace_map(&ks, d.point(i), d.point(j)).unwrap())
            .collect();
        let g = subgradient_risk(&[0.0, 0.0], &pairs).unwrap();
        let want1 = -((-4.0f64).exp() * -1.0 + (-0.25f64).exp() - (-2.25f64).exp()) / 3.0;
        assert!((g[0] + 2.0 / 3.0).abs() < 1e-15);
        assert!((g[1] - want1).abs() < 1e-15);
        assert!((g[1] + 0.21836).abs() < 1e-5);

        assert_eq!(subgradient_risk(&[100.0, 0.0], &pairs[1..2]).unwrap(), vec![0.0, 0.0]);
        // margin exactly 1: yy' <mu, z> = 2 * 0.5 = 1
        assert_eq!(subgradient_risk(&[2.0, 0.0], &pairs[1..2]).unwrap(), vec![0.0, 0.0]);
        assert!(subgradient_risk(&[0.0], &[]).is_err());
    }

    #[test]
    fn projections() {
        assert_eq!(project_nonneg(&[1.0, -1.0]), vec![1.0, 0.0]);
        assert_eq!(project_nonneg(&[0.0, 0.0]), vec![0.0, 0.0]);
        let v = project_nonneg(&[-0.3, 2.5, -0.0]);
        assert_eq!(v, vec![0.0, 2.5, 0.0]);
        assert!(v[2].is_sign_positive());

        let mut b = vec![3.0, -1.0, 4.0];
        project_feasible(Regularizer::L2, 1.0, &mut b);
        assert!((b[0] - 0.6).abs() < 1e-15 && b[1] == 0.0 && (b[2] - 0.8).abs() < 1e-15);

        let mut s = vec![3.0, -1.0, 1.0];
        project_feasible(Regularizer::L1, 2.0, &mut s);
        assert_eq!(s, vec![2.0, 0.0, 0.0]);
        let mut s = vec![1.0, 1.0, 0.5];
        project_feasible(Regularizer::L1, 1.0, &mut s);
        assert!((s[0] - 0.5).abs() < 1e-15 && (s[1] - 0.5).abs() < 1e-15 && s[2] == 0.0);
    }

    #[test]
    fn f1_strong_regularization_stationary_point() {
        let (d, ks) = f1();
        let res = solve_l2(&d, &ks, &SolverConfig::new(10.0)).unwrap();
        let want = [2.0 / 30.0, 0.218_363_7 / 10.0];
        assert!((res.mu_hat[0] - want[0]).abs() < 1e-4, "{:?}", res.mu_hat);
        assert!((res.mu_hat[1] - want[1]).abs() < 1e-4, "{:?}", res.mu_hat);
        assert!(res.converged, "{res:?}");
    }

    #[test]
    fn huge_lambda_gives_zero() {
        let (d, ks) = f1();
        for reg in [Regularizer::L2, Regularizer::L1] {
            let res = solve(reg, &d, &ks, &SolverConfig::new(1e6)).unwrap();
            assert!(res.mu_hat.iter().all(|&m| m.abs() < 1e-5), "{reg}: {:?}", res.mu_hat);
        }
    }

    #[test]
    fn l1_beats_planted_feasible_point() {
        let (d, ks) = f1();
        let cfg = SolverConfig::new(0.5);
        let res = solve_l1(&d, &ks, &cfg).unwrap();
        let probe = objective_l1(&[2.0, 0.0], &d, &ks, 0.5).unwrap();
        // the subgradient method certifies its own gap; it must cover the probe
        let gap = res.gap_estimate.unwrap();
        assert!(gap < 1e-4, "{res:?}");
        assert!(res.objective <= probe + gap + 1e-12, "{res:?}");
        assert!(res.mu_hat.l1() <= 2.0 / 0.5 + 1e-9);
    }

    #[test]
    fn lambda_zero_rejected() {
        let (d, ks) = f1();
        assert!(solve_l2(&d, &ks, &SolverConfig::new(0.0)).is_err());
        assert!(solve_l1(&d, &ks, &SolverConfig::new(-1.0)).is_err());
    }

    #[test]
    fn all_equal_labels_accepted() {
        let d = LabeledDataset::new(vec![vec![0.2], vec![0.9], vec![-0.4]], vec![1.0; 3]).unwrap();
        let ks = vec![BaseKernel::linear(1.0).unwrap(), BaseKernel::rbf(1.0).unwrap()];
        let res = solve_l2(&d, &ks, &SolverConfig::new(1.0)).unwrap();
        assert!(res.objective <= 1.0 + 1e-6);
    }

    #[test]
    fn gap_lower_bound_is_valid_on_f1() {
        // The exact F1 minimizer at lambda = 10 is in the all-active region,
        // so the optimal value is available in closed form.
        let (d, ks) = f1();
        let lambda = 10.0;
        let res = solve_l2(&d, &ks, &SolverConfig::new(lambda).max_iters(128)).unwrap();
        let g0 = [-2.0 / 3.0, -((-0.25f64).exp() - (-4.0f64).exp() - (-2.25f64).exp()) / 3.0];
        let opt: f64 = 1.0 - g0.iter().map(|g| g * g).sum::<f64>() / (2.0 * lambda);
        let gap = res.gap_estimate.unwrap();
        assert!(res.objective - gap <= opt + 1e-9, "{res:?} opt {opt}");
        assert!(res.objective >= opt - 1e-9);
    }
}
