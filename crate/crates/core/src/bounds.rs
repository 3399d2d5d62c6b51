//! Generalization-bound calculators for the L2 and L1 formulations, oracle
//! sample-size rules, and checkers for the inequalities the bounds rest on.
//!
//! Logarithms are natural. Terms that come from a Rademacher average over
//! `n/2` decoupled pairs use `2 * floor(n/2)` in place of `n`, so an odd
//! sample count behaves as if its last point were discarded.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::kernels::{dot, KappaVector};
use crate::optimize::Regularizer;
use crate::rng;

/// Largest sign-pattern count enumerated exactly (`2^20`).
pub const MAX_EXHAUSTIVE_SIGNS: usize = 20;

/// Largest number of tuples enumerated by the exhaustive decoupling check.
pub const MAX_EXHAUSTIVE_TUPLES: usize = 1 << 22;

fn even_part(n: usize) -> f64 {
    (2 * (n / 2)) as f64
}

fn log_inv(delta: f64) -> f64 {
    -delta.ln()
}

fn check_n(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::TooFewSamples {
            required: 2,
            actual: n,
        });
    }
    Ok(())
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::InvalidParameter(format!("delta must lie in (0, 1], got {delta}")));
    }
    Ok(())
}

/// Ceiling that ignores floating-point noise just above an integer.
fn ceil_count(x: f64) -> u64 {
    if !(x > 0.0) {
        return 0;
    }
    let r = x.round();
    if (x - r).abs() <= 1e-9 * r.max(1.0) {
        r as u64
    } else {
        x.ceil() as u64
    }
}

/// `r ||kappa||_2 sqrt(2/n)`: Rademacher complexity of the L2 ball of
/// radius `r` over `n/2` decoupled pairs.
pub fn rad_bound_l2(r: f64, kappa_l2: f64, n: usize) -> Result<f64> {
    check_n(n)?;
    Ok(r * kappa_l2 * (2.0 / even_part(n)).sqrt())
}

/// `s ||kappa||_inf sqrt(2 log p / n)` for the L1 ball of radius `s`.
pub fn rad_bound_l1(s: f64, kappa_linf: f64, n: usize, p: usize) -> Result<f64> {
    if p <= 2 {
        return Err(Error::Unsupported(format!(
            "p = {p}: the q-norm regularizer with q = log p / (log p - 1) needs p >= 3"
        )));
    }
    rad_bound_l1_log(s, kappa_linf, n, (p as f64).ln())
}

/// As [`rad_bound_l1`] with `log p` given directly; requires `log p > 1`.
pub fn rad_bound_l1_log(s: f64, kappa_linf: f64, n: usize, log_p: f64) -> Result<f64> {
    check_n(n)?;
    if !(log_p > 1.0) {
        return Err(Error::Unsupported(format!(
            "log p = {log_p} <= 1 makes q = log p / (log p - 1) degenerate"
        )));
    }
    Ok(s * kappa_linf * (2.0 * log_p / even_part(n)).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundForm {
    #[default]
    Exact,
    Simplified,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub n: usize,
    pub p: usize,
    pub lambda: f64,
    pub delta: f64,
    pub kappa_l2: f64,
    pub kappa_linf: f64,
    /// Fixed L2 radius for the uniform deviation bound; defaults to `r_lambda`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    /// Fixed L1 radius; defaults to `s_lambda`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<f64>,
}

impl BoundInputs {
    pub fn new(n: usize, kappa: &KappaVector, lambda: f64, delta: f64) -> Self {
        Self {
            n,
            p: kappa.len(),
            lambda,
            delta,
            kappa_l2: kappa.l2(),
            kappa_linf: kappa.linf(),
            r: None,
            s: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_n(self.n)?;
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::InvalidParameter(format!("lambda must be > 0, got {}", self.lambda)));
        }
        for (name, v) in [("kappa_l2", self.kappa_l2), ("kappa_linf", self.kappa_linf)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.p == 0 {
            return Err(Error::InvalidParameter("p must be >= 1".into()));
        }
        Ok(())
    }

    fn log_p(&self) -> f64 {
        (self.p as f64).ln()
    }
}

/// Deviation `R(mu_hat) - R_hat(mu_hat)` allowed for the L2 minimizer.
///
/// exact: `4 k sqrt(1/(lambda n)) + (1 + k sqrt(2/lambda)) sqrt(2 log(1/delta) / n)`
/// simplified: `6 k sqrt(log(1/delta) / (lambda n))`
pub fn gen_bound_l2(inputs: &BoundInputs, form: BoundForm) -> f64 {
    gen_bound_l2_log(inputs.kappa_l2, inputs.lambda, inputs.n, log_inv(inputs.delta), form)
}

pub fn gen_bound_l2_log(kappa_l2: f64, lambda: f64, n: usize, log_inv_delta: f64, form: BoundForm) -> f64 {
    let nf = n as f64;
    match form {
        BoundForm::Exact => {
            4.0 * kappa_l2 * (1.0 / (lambda * even_part(n))).sqrt()
                + (1.0 + kappa_l2 * (2.0 / lambda).sqrt()) * (2.0 * log_inv_delta / nf).sqrt()
        }
        BoundForm::Simplified => 6.0 * kappa_l2 * (log_inv_delta / (lambda * nf)).sqrt(),
    }
}

/// Deviation allowed for the L1 minimizer.
///
/// exact: `(4 k/lambda) sqrt(2 log p / n) + (1 + 2k/lambda) sqrt(2 log(1/delta) / n)`
/// simplified: `(6 k / (lambda sqrt n)) (sqrt(log p) + sqrt(log(1/delta)))`
pub fn gen_bound_l1(inputs: &BoundInputs, form: BoundForm) -> f64 {
    if inputs.p <= 2 {
        log::warn!("L1 bound evaluated with p = {} <= 2; its derivation needs p >= 3", inputs.p);
    }
    gen_bound_l1_log(
        inputs.kappa_linf,
        inputs.lambda,
        inputs.n,
        inputs.log_p(),
        log_inv(inputs.delta),
        form,
    )
}

pub fn gen_bound_l1_log(
    kappa_linf: f64,
    lambda: f64,
    n: usize,
    log_p: f64,
    log_inv_delta: f64,
    form: BoundForm,
) -> f64 {
    let nf = n as f64;
    match form {
        BoundForm::Exact => {
            (4.0 * kappa_linf / lambda) * (2.0 * log_p / even_part(n)).sqrt()
                + (1.0 + 2.0 * kappa_linf / lambda) * (2.0 * log_inv_delta / nf).sqrt()
        }
        BoundForm::Simplified => {
            (6.0 * kappa_linf / (lambda * nf.sqrt())) * (log_p.sqrt() + log_inv_delta.sqrt())
        }
    }
}

/// `2 r k sqrt(2/n) + (1 + r k) sqrt(2 log(1/delta) / n)`: uniform bound on
/// `R_hat(mu) - R(mu)` over the fixed ball `||mu||_2 <= r`.
pub fn uniform_dev_bound_l2(r: f64, kappa_l2: f64, n: usize, delta: f64) -> f64 {
    uniform_dev_bound_l2_log(r, kappa_l2, n, log_inv(delta))
}

pub fn uniform_dev_bound_l2_log(r: f64, kappa_l2: f64, n: usize, log_inv_delta: f64) -> f64 {
    let nf = n as f64;
    2.0 * r * kappa_l2 * (2.0 / even_part(n)).sqrt()
        + (1.0 + r * kappa_l2) * (2.0 * log_inv_delta / nf).sqrt()
}

/// `2 s k sqrt(2 log p / n) + (1 + s k) sqrt(2 log(1/delta) / n)` over the
/// fixed ball `||mu||_1 <= s`.
pub fn uniform_dev_bound_l1(s: f64, kappa_linf: f64, n: usize, p: usize, delta: f64) -> f64 {
    uniform_dev_bound_l1_log(s, kappa_linf, n, (p as f64).ln(), log_inv(delta))
}

pub fn uniform_dev_bound_l1_log(s: f64, kappa_linf: f64, n: usize, log_p: f64, log_inv_delta: f64) -> f64 {
    let nf = n as f64;
    2.0 * s * kappa_linf * (2.0 * log_p / even_part(n)).sqrt()
        + (1.0 + s * kappa_linf) * (2.0 * log_inv_delta / nf).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSampleSize {
    /// Required `n` as given by the printed rule.
    pub n: u64,
    /// The prescribed regularization `lambda = 2 eps1 / (3 ||mu_o||^2)` (L2)
    /// or `2 eps1 / (3 ||mu_o||_1)` (L1).
    pub lambda: f64,
    /// Leading constant of the rule that was applied.
    pub constant: f64,
    /// Smallest `n` that makes the displayed risk inequality hold after
    /// substituting `lambda` (L1 only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub derived_sufficient_n: Option<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

fn oracle_checks(norm: f64, eps1: f64, delta: f64) -> Result<Vec<String>> {
    if !(eps1 > 0.0 && eps1.is_finite()) {
        return Err(Error::InvalidParameter(format!("eps1 must be > 0, got {eps1}")));
    }
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::InvalidParameter(format!("||mu_o|| must be > 0, got {norm}")));
    }
    check_delta(delta)?;
    let mut warnings = Vec::new();
    if log_inv(delta) == 0.0 {
        warnings.push("delta = 1: the confidence term vanishes and the rule is vacuous".into());
    }
    Ok(warnings)
}

/// `n >= (500 / eps1^3) ||mu_o||_2^2 ||kappa||_2^2 log(1/delta)` for
/// `eps1 < 3/4`, otherwise `n >= (650 / eps1^2) (...)`.
pub fn oracle_sample_size_l2(mu_o_l2: f64, kappa_l2: f64, eps1: f64, delta: f64) -> Result<OracleSampleSize> {
    let warnings = oracle_checks(mu_o_l2, eps1, delta)?;
    let scale = mu_o_l2 * mu_o_l2 * kappa_l2 * kappa_l2 * log_inv(delta);
    let (constant, n) = if eps1 < 0.75 {
        (500.0, 500.0 / eps1.powi(3) * scale)
    } else {
        (650.0, 650.0 / eps1.powi(2) * scale)
    };
    Ok(OracleSampleSize {
        n: ceil_count(n),
        lambda: 2.0 * eps1 / (3.0 * mu_o_l2 * mu_o_l2),
        constant,
        derived_sufficient_n: None,
        warnings,
    })
}

/// `n >= 135 ||mu_o||_1 ||kappa||_inf (sqrt(log p) + sqrt(log(1/delta))) / eps1^2`.
pub fn oracle_sample_size_l1(
    mu_o_l1: f64,
    kappa_linf: f64,
    eps1: f64,
    delta: f64,
    p: usize,
) -> Result<OracleSampleSize> {
    let mut out = oracle_sample_size_l1_log(mu_o_l1, kappa_linf, eps1, delta, (p as f64).ln())?;
    if p <= 2 {
        out.warnings.push(format!("p = {p} <= 2: the L1 analysis needs p >= 3"));
    }
    Ok(out)
}

pub fn oracle_sample_size_l1_log(
    mu_o_l1: f64,
    kappa_linf: f64,
    eps1: f64,
    delta: f64,
    log_p: f64,
) -> Result<OracleSampleSize> {
    let warnings = oracle_checks(mu_o_l1, eps1, delta)?;
    let logs = log_p.max(0.0).sqrt() + log_inv(delta).sqrt();
    let n = 135.0 * mu_o_l1 * kappa_linf * logs / (eps1 * eps1);
    let lambda = 2.0 * eps1 / (3.0 * mu_o_l1);
    // eps_o + eps1/3 + 6 k logs (||mu_o||_1 + 1/lambda) / sqrt(n) <= eps_o + eps1
    let root = 9.0 * kappa_linf * logs * (mu_o_l1 + 1.0 / lambda) / eps1;
    Ok(OracleSampleSize {
        n: ceil_count(n),
        lambda,
        constant: 135.0,
        derived_sufficient_n: Some(ceil_count(root * root)),
        warnings,
    })
}

/// Oracle-oblivious regularization `lambda = n^(-1/3)`.
pub fn oblivious_lambda(n: usize) -> f64 {
    (n as f64).powf(-1.0 / 3.0)
}

/// An `eps`-combination-good `mu` gives an `(eps, 1/<mu, kappa>)`-good kernel.
pub fn kernel_goodness_params(mu: &[f64], kappa: &KappaVector, eps: f64) -> Result<(f64, f64)> {
    check_len(kappa.len(), mu.len())?;
    if mu.iter().any(|&m| m < 0.0) {
        return Err(Error::InvalidParameter("mu must be nonnegative".into()));
    }
    let s = dot(mu, kappa);
    if !(s > 0.0) {
        return Err(Error::UndefinedMargin);
    }
    Ok((eps, 1.0 / s))
}

/// Worst-case margin over the L2 certificate ball: `sqrt(lambda/2) / ||kappa||_2`.
pub fn gamma_certificate_l2(lambda: f64, kappa_l2: f64) -> f64 {
    (lambda / 2.0).sqrt() / kappa_l2
}

/// As [`gamma_certificate_l2`] when every `kappa_i^2 <= kappa_sq`:
/// `(1/kappa_sq) sqrt(lambda / (2p))`.
pub fn gamma_certificate_l2_common(lambda: f64, kappa_sq: f64, p: usize) -> f64 {
    (lambda / (2.0 * p as f64)).sqrt() / kappa_sq
}

/// Worst-case margin over the L1 certificate ball: `lambda / (2 ||kappa||_inf)`.
pub fn gamma_certificate_l1(lambda: f64, kappa_linf: f64) -> f64 {
    lambda / (2.0 * kappa_linf)
}

/// `ceil(C kappa^4 log(1/delta) / (eps1^2 gamma^2))` labeled samples for the
/// second-stage classifier. The constant is not pinned down by the analysis;
/// `C = 1` is a placeholder.
pub fn second_stage_sample_size(kappa: f64, gamma: f64, eps1: f64, delta: f64, c: f64) -> Result<u64> {
    for (name, v) in [("kappa", kappa), ("gamma", gamma), ("eps1", eps1), ("C", c)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidParameter(format!("{name} must be > 0, got {v}")));
        }
    }
    check_delta(delta)?;
    Ok(ceil_count(c * kappa.powi(4) * log_inv(delta) / (eps1 * eps1 * gamma * gamma)))
}

/// Every bound for one `(n, p, lambda, delta, kappa)` configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub inputs: BoundInputs,
    pub reg: Regularizer,
    pub form: BoundForm,
    /// The bound selected by `reg` and `form`.
    pub selected: f64,
    pub r_lambda: f64,
    pub s_lambda: f64,
    pub rad_l2: f64,
    pub rad_l1: Option<f64>,
    /// `s k sqrt(4 log p / n)`: the value obtained by plugging `m = n/2` and
    /// the `1/log p` strong-convexity constant into the generic bound. The
    /// displayed L1 formula is smaller by a factor `sqrt(2)`.
    pub rad_l1_generic: Option<f64>,
    pub gen_l2_exact: f64,
    pub gen_l2_simplified: f64,
    pub gen_l2_exact_minus_simplified: f64,
    pub gen_l1_exact: f64,
    pub gen_l1_simplified: f64,
    pub gen_l1_exact_minus_simplified: f64,
    pub uniform_dev_l2: f64,
    pub uniform_dev_l1: f64,
    pub uniform_dev_radius_l2: f64,
    pub uniform_dev_radius_l1: f64,
    pub gamma_l2: f64,
    pub gamma_l1: f64,
    /// `n` was odd; Rademacher terms use `n - 1`.
    pub odd_n_discard: bool,
    pub warnings: Vec<String>,
}

impl BoundReport {
    pub fn compute(inputs: BoundInputs, reg: Regularizer, form: BoundForm) -> Result<Self> {
        inputs.validate()?;
        let mut warnings = Vec::new();
        let r_lambda = Regularizer::L2.radius(inputs.lambda);
        let s_lambda = Regularizer::L1.radius(inputs.lambda);
        let r = inputs.r.unwrap_or(r_lambda);
        let s = inputs.s.unwrap_or(s_lambda);
        let rad_l2 = rad_bound_l2(r_lambda, inputs.kappa_l2, inputs.n)?;
        let (rad_l1, rad_l1_generic) = match rad_bound_l1(s_lambda, inputs.kappa_linf, inputs.n, inputs.p) {
            Ok(v) => (Some(v), Some(v * 2f64.sqrt())),
            Err(e) => {
                warnings.push(e.to_string());
                (None, None)
            }
        };
        if inputs.p <= 2 {
            warnings.push(format!(
                "L1 bounds computed with p = {} <= 2 outside the range their derivation covers",
                inputs.p
            ));
        }
        let gen_l2_exact = gen_bound_l2(&inputs, BoundForm::Exact);
        let gen_l2_simplified = gen_bound_l2(&inputs, BoundForm::Simplified);
        let gen_l1_exact = gen_bound_l1(&inputs, BoundForm::Exact);
        let gen_l1_simplified = gen_bound_l1(&inputs, BoundForm::Simplified);
        if gen_l2_simplified < gen_l2_exact {
            warnings.push(
                "simplified L2 bound is below the exact form; violation checks use the exact form"
                    .into(),
            );
        }
        if gen_l1_simplified < gen_l1_exact {
            warnings.push(
                "simplified L1 bound is below the exact form; violation checks use the exact form"
                    .into(),
            );
        }
        let odd_n_discard = inputs.n % 2 == 1;
        if odd_n_discard {
            warnings.push(format!(
                "n = {} is odd: one sample is discarded in the n/2 pairing terms",
                inputs.n
            ));
        }
        let selected = match (reg, form) {
            (Regularizer::L2, BoundForm::Exact) => gen_l2_exact,
            (Regularizer::L2, BoundForm::Simplified) => gen_l2_simplified,
            (Regularizer::L1, BoundForm::Exact) => gen_l1_exact,
            (Regularizer::L1, BoundForm::Simplified) => gen_l1_simplified,
        };
        Ok(Self {
            inputs,
            reg,
            form,
            selected,
            r_lambda,
            s_lambda,
            rad_l2,
            rad_l1,
            rad_l1_generic,
            gen_l2_exact,
            gen_l2_simplified,
            gen_l2_exact_minus_simplified: gen_l2_exact - gen_l2_simplified,
            gen_l1_exact,
            gen_l1_simplified,
            gen_l1_exact_minus_simplified: gen_l1_exact - gen_l1_simplified,
            uniform_dev_l2: uniform_dev_bound_l2(r, inputs.kappa_l2, inputs.n, inputs.delta),
            uniform_dev_l1: uniform_dev_bound_l1(s, inputs.kappa_linf, inputs.n, inputs.p, inputs.delta),
            uniform_dev_radius_l2: r,
            uniform_dev_radius_l1: s,
            gamma_l2: gamma_certificate_l2(inputs.lambda, inputs.kappa_l2),
            gamma_l1: gamma_certificate_l1(inputs.lambda, inputs.kappa_linf),
            odd_n_discard,
            warnings,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "norm", content = "radius", rename_all = "lowercase")]
pub enum Ball {
    L2(f64),
    L1(f64),
}

impl Ball {
    pub fn radius(&self) -> f64 {
        match *self {
            Ball::L2(r) | Ball::L1(r) => r,
        }
    }

    /// `sup_{mu in ball} <mu, v>`, optionally over the nonnegative part only.
    pub fn support(&self, v: &[f64], nonneg: bool) -> f64 {
        match *self {
            Ball::L2(r) => {
                let sq: f64 = v
                    .iter()
                    .map(|&x| if nonneg && x < 0.0 { 0.0 } else { x * x })
                    .sum();
                r * sq.sqrt()
            }
            Ball::L1(s) => {
                let m = if nonneg {
                    v.iter().fold(0.0_f64, |m, &x| m.max(x))
                } else {
                    v.iter().fold(0.0_f64, |m, &x| m.max(x.abs()))
                };
                s * m
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum Expectation {
    Exhaustive,
    MonteCarlo { draws: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimateMode {
    MonteCarlo,
    Exhaustive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RademacherEstimate {
    pub value: f64,
    pub stderr: f64,
    pub mode: EstimateMode,
    pub ball: Ball,
    pub nonneg_constrained: bool,
}

fn sign(mask: u64, i: usize) -> f64 {
    if mask >> i & 1 == 1 {
        1.0
    } else {
        -1.0
    }
}

fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (m - 1.0)).sqrt() / m.sqrt())
}

/// `(1/m) E_eps sup_{mu in ball} sum_i eps_i <mu, z_i>`, with the supremum
/// in closed form via the dual norm.
pub fn empirical_rademacher(
    zfeatures: &[Vec<f64>],
    ball: Ball,
    nonneg: bool,
    mode: Expectation,
) -> Result<RademacherEstimate> {
    let m = zfeatures.len();
    if m == 0 {
        return Err(Error::EmptyData);
    }
    let p = zfeatures[0].len();
    for z in zfeatures {
        check_len(p, z.len())?;
    }
    let mut v = vec![0.0; p];
    let mut sup_at = |signs: &dyn Fn(usize) -> f64| {
        v.iter_mut().for_each(|x| *x = 0.0);
        for (i, z) in zfeatures.iter().enumerate() {
            let e = signs(i);
            v.iter_mut().zip(z).for_each(|(a, b)| *a += e * b);
        }
        ball.support(&v, nonneg) / m as f64
    };
    let (value, stderr, mode) = match mode {
        Expectation::Exhaustive => {
            if m > MAX_EXHAUSTIVE_SIGNS {
                return Err(Error::Unsupported(format!(
                    "exhaustive sign enumeration is capped at m = {MAX_EXHAUSTIVE_SIGNS}, got {m}"
                )));
            }
            let count = 1u64 << m;
            let total: f64 = (0..count).map(|mask| sup_at(&|i| sign(mask, i))).sum();
            (total / count as f64, 0.0, EstimateMode::Exhaustive)
        }
        Expectation::MonteCarlo { draws, seed } => {
            if draws == 0 {
                return Err(Error::InvalidParameter("draws must be >= 1".into()));
            }
            let mut r = rng::stream(seed, 0);
            let mut signs = vec![0.0; m];
            let vals: Vec<f64> = (0..draws)
                .map(|_| {
                    signs
                        .iter_mut()
                        .for_each(|s| *s = if r.gen::<bool>() { 1.0 } else { -1.0 });
                    sup_at(&|i| signs[i])
                })
                .collect();
            let (mean, se) = mean_and_stderr(&vals);
            (mean, se, EstimateMode::MonteCarlo)
        }
    };
    Ok(RademacherEstimate {
        value,
        stderr,
        mode,
        ball,
        nonneg_constrained: nonneg,
    })
}

/// Both sides of an inequality `lhs <= rhs` evaluated as expectations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InequalityCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
    /// Standard error of `lhs - rhs` in Monte Carlo mode.
    pub stderr: f64,
    pub mode: EstimateMode,
}

/// Absolute slack for exact comparisons of two sums of O(1) terms.
const EXACT_SLACK: f64 = 1e-12;

/// A symmetric pair feature `f(a, b) = f(b, a) in R^p` over a finite support
/// with point probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct PairFeatureTable {
    probs: Vec<f64>,
    p: usize,
    values: Vec<f64>,
}

impl PairFeatureTable {
    pub fn from_fn<F>(probs: Vec<f64>, p: usize, f: F) -> Result<Self>
    where
        F: Fn(usize, usize) -> Vec<f64>,
    {
        let k = probs.len();
        if k == 0 || p == 0 {
            return Err(Error::EmptyData);
        }
        if probs.iter().any(|&w| !(w >= 0.0)) || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter("support probabilities must sum to 1".into()));
        }
        let mut values = vec![0.0; k * k * p];
        for a in 0..k {
            for b in 0..k {
                let v = f(a, b);
                check_len(p, v.len())?;
                values[(a * k + b) * p..(a * k + b + 1) * p].copy_from_slice(&v);
            }
        }
        for a in 0..k {
            for b in 0..a {
                if values[(a * k + b) * p..(a * k + b + 1) * p] != values[(b * k + a) * p..(b * k + a + 1) * p] {
                    return Err(Error::InvalidParameter(format!(
                        "pair features must be symmetric; f({a},{b}) != f({b},{a})"
                    )));
                }
            }
        }
        Ok(Self { probs, p, values })
    }

    pub fn support_size(&self) -> usize {
        self.probs.len()
    }

    fn get(&self, a: usize, b: usize) -> &[f64] {
        let k = self.probs.len();
        &self.values[(a * k + b) * self.p..(a * k + b + 1) * self.p]
    }

    /// Coupled and decoupled suprema for one tuple of support indices.
    fn sides(&self, tuple: &[usize], ball: Ball, nonneg: bool, acc: &mut [f64]) -> (f64, f64) {
        let n = tuple.len();
        acc.iter_mut().for_each(|x| *x = 0.0);
        for i in 0..n {
            for j in (i + 1)..n {
                acc.iter_mut().zip(self.get(tuple[i], tuple[j])).for_each(|(a, b)| *a += b);
            }
        }
        let w = 2.0 / (n * (n - 1)) as f64;
        acc.iter_mut().for_each(|x| *x *= w);
        let lhs = ball.support(acc, nonneg);
        acc.iter_mut().for_each(|x| *x = 0.0);
        let h = n / 2;
        for i in 0..h {
            acc.iter_mut().zip(self.get(tuple[i], tuple[h + i])).for_each(|(a, b)| *a += b);
        }
        let w = 2.0 / n as f64;
        acc.iter_mut().for_each(|x| *x *= w);
        (lhs, ball.support(acc, nonneg))
    }
}

/// Checks `E sup (2/(n(n-1))) sum_{i<j} q(X_i, X_j) <= E sup (2/n) sum_{i<=n/2} q(X_i, X_{n/2+i})`
/// for the linear class `q_mu = <mu, f>`, `mu` ranging over `ball`, with
/// `X_1..X_n` i.i.d. from the table's support distribution.
pub fn check_decoupling(
    table: &PairFeatureTable,
    ball: Ball,
    nonneg: bool,
    n: usize,
    mode: Expectation,
) -> Result<InequalityCheck> {
    if n < 2 || n % 2 == 1 {
        return Err(Error::InvalidParameter(format!("decoupling needs an even n >= 2, got {n}")));
    }
    let k = table.support_size();
    let mut acc = vec![0.0; table.p];
    let mut tuple = vec![0usize; n];
    match mode {
        Expectation::Exhaustive => {
            let total = (k as f64).powi(n as i32);
            if n > 10 || total > MAX_EXHAUSTIVE_TUPLES as f64 {
                return Err(Error::Unsupported(format!(
                    "exhaustive decoupling check over {k}^{n} tuples is too large"
                )));
            }
            let (mut lhs, mut rhs) = (0.0, 0.0);
            for code in 0..total as usize {
                let mut c = code;
                let mut w = 1.0;
                for slot in tuple.iter_mut() {
                    *slot = c % k;
                    c /= k;
                    w *= table.probs[*slot];
                }
                if w == 0.0 {
                    continue;
                }
                let (l, r) = table.sides(&tuple, ball, nonneg, &mut acc);
                lhs += w * l;
                rhs += w * r;
            }
            Ok(InequalityCheck {
                lhs,
                rhs,
                holds: lhs <= rhs + EXACT_SLACK,
                stderr: 0.0,
                mode: EstimateMode::Exhaustive,
            })
        }
        Expectation::MonteCarlo { draws, seed } => {
            if draws < 2 {
                return Err(Error::InvalidParameter("need at least 2 Monte Carlo draws".into()));
            }
            let mut r = rng::stream(seed, 0);
            let cdf: Vec<f64> = table
                .probs
                .iter()
                .scan(0.0, |s, &w| {
                    *s += w;
                    Some(*s)
                })
                .collect();
            let (mut ls, mut rs, mut ds) = (Vec::new(), Vec::new(), Vec::new());
            for _ in 0..draws {
                for slot in tuple.iter_mut() {
                    let u: f64 = r.gen();
                    *slot = cdf.iter().position(|&c| u < c).unwrap_or(k - 1);
                }
                let (l, rr) = table.sides(&tuple, ball, nonneg, &mut acc);
                ls.push(l);
                rs.push(rr);
                ds.push(l - rr);
            }
            let (lhs, _) = mean_and_stderr(&ls);
            let (rhs, _) = mean_and_stderr(&rs);
            let (diff, se) = mean_and_stderr(&ds);
            Ok(InequalityCheck {
                lhs,
                rhs,
                holds: diff <= 3.0 * se + EXACT_SLACK,
                stderr: se,
                mode: EstimateMode::MonteCarlo,
            })
        }
    }
}

/// Checks the contraction inequality
/// `E sup_h (1/m) sum_i eps_i phi_i(h(x_i)) <= E sup_h (1/m) sum_i eps_i h(x_i)`
/// for the 1-Lipschitz wrappers `phi_i(t) = [1 - a_i t]_+`.
///
/// `h_values[i][j]` is hypothesis `j` evaluated at point `i`; `labels[i]` is
/// `a_i`.
pub fn check_contraction(h_values: &[Vec<f64>], labels: &[f64], mode: Expectation) -> Result<InequalityCheck> {
    let m = h_values.len();
    if m == 0 {
        return Err(Error::EmptyData);
    }
    check_len(m, labels.len())?;
    let k = h_values[0].len();
    if k == 0 {
        return Err(Error::InvalidParameter("need at least one hypothesis".into()));
    }
    for row in h_values {
        check_len(k, row.len())?;
    }
    if labels.iter().any(|a| a.abs() > 1.0) {
        return Err(Error::InvalidParameter("|a_i| > 1 breaks the 1-Lipschitz wrapper".into()));
    }
    let wrapped: Vec<Vec<f64>> = h_values
        .iter()
        .zip(labels)
        .map(|(row, a)| row.iter().map(|h| (1.0 - a * h).max(0.0)).collect())
        .collect();
    let sup = |vals: &[Vec<f64>], signs: &dyn Fn(usize) -> f64| -> f64 {
        (0..k)
            .map(|j| (0..m).map(|i| signs(i) * vals[i][j]).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max)
            / m as f64
    };
    match mode {
        Expectation::Exhaustive => {
            if m > MAX_EXHAUSTIVE_SIGNS {
                return Err(Error::Unsupported(format!(
                    "exhaustive sign enumeration is capped at m = {MAX_EXHAUSTIVE_SIGNS}, got {m}"
                )));
            }
            let count = 1u64 << m;
            let (mut lhs, mut rhs) = (0.0, 0.0);
            for mask in 0..count {
                lhs += sup(&wrapped, &|i| sign(mask, i));
                rhs += sup(h_values, &|i| sign(mask, i));
            }
            let (lhs, rhs) = (lhs / count as f64, rhs / count as f64);
            Ok(InequalityCheck {
                lhs,
                rhs,
                holds: lhs <= rhs + EXACT_SLACK,
                stderr: 0.0,
                mode: EstimateMode::Exhaustive,
            })
        }
        Expectation::MonteCarlo { draws, seed } => {
            if draws < 2 {
                return Err(Error::InvalidParameter("need at least 2 Monte Carlo draws".into()));
            }
            let mut r = rng::stream(seed, 0);
            let mut signs = vec![0.0; m];
            let (mut ls, mut rs, mut ds) = (Vec::new(), Vec::new(), Vec::new());
            for _ in 0..draws {
                signs
                    .iter_mut()
                    .for_each(|s| *s = if r.gen::<bool>() { 1.0 } else { -1.0 });
                let l = sup(&wrapped, &|i| signs[i]);
                let rr = sup(h_values, &|i| signs[i]);
                ls.push(l);
                rs.push(rr);
                ds.push(l - rr);
            }
            let (lhs, _) = mean_and_stderr(&ls);
            let (rhs, _) = mean_and_stderr(&rs);
            let (diff, se) = mean_and_stderr(&ds);
            Ok(InequalityCheck {
                lhs,
                rhs,
                holds: diff <= 3.0 * se + EXACT_SLACK,
                stderr: se,
                mode: EstimateMode::MonteCarlo,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const E_INV: f64 = 0.36787944117144233;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn rad_l2_examples() {
        assert_eq!(rad_bound_l2(0.0, 3.0, 10).unwrap(), 0.0);
        let r = 2f64.sqrt();
        assert!(close(rad_bound_l2(r, 2f64.sqrt(), 8).unwrap(), 1.0, 1e-15));
        assert!(close(rad_bound_l2(1.0, 1.0, 4).unwrap(), 0.5f64.sqrt(), 1e-15));
        assert!(rad_bound_l2(1.0, 1.0, 1).is_err());
        // odd n pairs n - 1 samples
        assert_eq!(rad_bound_l2(1.0, 1.0, 5).unwrap(), rad_bound_l2(1.0, 1.0, 4).unwrap());
    }

    #[test]
    fn rad_l1_examples() {
        assert_eq!(rad_bound_l1(0.0, 1.0, 16, 5).unwrap(), 0.0);
        assert!(close(rad_bound_l1_log(2.0, 1.0, 16, 2.0).unwrap(), 1.0, 1e-15));
        let want = 2.0 * (2.0 * 10f64.ln() / 100.0).sqrt();
        assert!(close(rad_bound_l1(1.0, 2.0, 100, 10).unwrap(), want, 1e-15));
        assert!(close(want, 0.4292, 1e-4));
        assert!(matches!(rad_bound_l1(1.0, 1.0, 10, 2), Err(Error::Unsupported(_))));
        assert!(rad_bound_l1_log(1.0, 1.0, 10, 1.0).is_err());
    }

    #[test]
    fn gen_l2_examples() {
        let inputs = BoundInputs {
            n: 1152,
            p: 2,
            lambda: 0.5,
            delta: E_INV,
            kappa_l2: 2f64.sqrt(),
            kappa_linf: 1.0,
            r: None,
            s: None,
        };
        let simp = gen_bound_l2(&inputs, BoundForm::Simplified);
        assert!(close(simp, 6.0 * 2f64.sqrt() / 24.0, 1e-12));
        assert!(close(simp, 0.3536, 1e-4));
        let exact = gen_bound_l2(&inputs, BoundForm::Exact);
        let want = 2f64.sqrt() / 6.0 + (1.0 + 2.0 * 2f64.sqrt()) * (2.0 / 1152.0f64).sqrt();
        assert!(close(exact, want, 1e-12));
        assert!(close(exact, 0.3952, 1e-4));
        assert_eq!(gen_bound_l2_log(1.0, 1.0, 100, 0.0, BoundForm::Simplified), 0.0);
    }

    #[test]
    fn gen_l2_forms_differ_by_dropped_term() {
        for &(k, lambda, n) in &[(1.0, 0.5, 100usize), (3.2, 2.0, 1000), (0.7, 0.01, 64)] {
            let d = gen_bound_l2_log(k, lambda, n, 1.0, BoundForm::Exact)
                - gen_bound_l2_log(k, lambda, n, 1.0, BoundForm::Simplified);
            assert!(close(d, (2.0 / n as f64).sqrt(), 1e-12), "{d}");
        }
    }

    #[test]
    fn gen_l1_examples() {
        let v = gen_bound_l1_log(1.0, 1.0, 100, 1.0, 1.0, BoundForm::Simplified);
        assert!(close(v, 1.2, 1e-12));
        assert_eq!(gen_bound_l1_log(1.0, 1.0, 100, 0.0, 0.0, BoundForm::Simplified), 0.0);
        let v = gen_bound_l1_log(1.0, 2.0, 400, 4.0, 1.0, BoundForm::Exact);
        assert!(close(v, 2.0 * (8.0f64 / 400.0).sqrt() + 2.0 * (2.0f64 / 400.0).sqrt(), 1e-12));
        assert!(close(v, 0.4243, 1e-4));
    }

    #[test]
    fn uniform_dev_examples() {
        assert!(close(uniform_dev_bound_l2(0.0, 5.0, 2, E_INV), 1.0, 1e-12));
        assert!(close(uniform_dev_bound_l2(1.0, 1.0, 8, 1.0), 1.0, 1e-15));
        assert!(uniform_dev_bound_l2(1.0, 1.0, 1 << 40, 0.1) < 1e-5);
        assert!(close(uniform_dev_bound_l1(0.0, 5.0, 2, 7, E_INV), 1.0, 1e-12));
        assert!(close(uniform_dev_bound_l1_log(1.0, 1.0, 8, 1.0, 0.0), 1.0, 1e-15));
        assert!(uniform_dev_bound_l1(1.0, 1.0, 1 << 40, 10, 0.1) < 1e-4);
    }

    #[test]
    fn oracle_l2_examples() {
        let a = oracle_sample_size_l2(1.0, 1.0, 0.5, E_INV).unwrap();
        assert_eq!(a.n, 4000);
        assert_eq!(a.constant, 500.0);
        assert!(close(a.lambda, 1.0 / 3.0, 1e-15));
        let b = oracle_sample_size_l2(1.0, 1.0, 1.0, E_INV).unwrap();
        assert_eq!((b.n, b.constant), (650, 650.0));
        // branch switches exactly at 3/4
        assert_eq!(oracle_sample_size_l2(1.0, 1.0, 0.75, E_INV).unwrap().constant, 650.0);
        let c = oracle_sample_size_l2(1.0, 1.0, 0.5, 1.0).unwrap();
        assert_eq!(c.n, 0);
        assert!(!c.warnings.is_empty());
        assert!(oracle_sample_size_l2(0.0, 1.0, 0.5, 0.1).is_err());
    }

    #[test]
    fn oracle_l1_examples() {
        let a = oracle_sample_size_l1_log(1.0, 1.0, 1.0, E_INV, 1.0).unwrap();
        assert_eq!(a.n, 270);
        let b = oracle_sample_size_l1_log(1.0, 1.0, 0.5, E_INV, 1.0).unwrap();
        assert_eq!(b.n, 1080);
        let c = oracle_sample_size_l1_log(1.0, 1.0, 0.5, 1.0, 1.0).unwrap();
        assert_eq!(c.n, 540);
        // the derived rule needs far more samples than the printed one
        // [9 * 2 * (1 + 3/2)]^2
        assert_eq!(a.derived_sufficient_n, Some(2025));
        assert!(!oracle_sample_size_l1(1.0, 1.0, 1.0, 0.1, 2).unwrap().warnings.is_empty());
    }

    #[test]
    fn goodness_params_and_certificates() {
        let kappa = KappaVector::new(vec![1.0, 1.0]).unwrap();
        let (e, g) = kernel_goodness_params(&[2.0, 0.0], &kappa, 1.0 / 18.0).unwrap();
        assert_eq!((e, g), (1.0 / 18.0, 0.5));
        assert!(matches!(
            kernel_goodness_params(&[0.0, 0.0], &kappa, 0.1),
            Err(Error::UndefinedMargin)
        ));

        // mu on the L2 certificate sphere aligned with kappa attains
        // <mu, kappa> = sqrt(2/lambda) ||kappa||_2.
        let lambda = 0.3;
        let kappa = KappaVector::new(vec![1.0, 2.0, 0.5]).unwrap();
        let scale = (2.0 / lambda as f64).sqrt() / kappa.l2();
        let mu: Vec<f64> = kappa.iter().map(|k| k * scale).collect();
        let (_, g) = kernel_goodness_params(&mu, &kappa, 0.0).unwrap();
        assert!(close(g, gamma_certificate_l2(lambda, kappa.l2()), 1e-12));

        let common = KappaVector::new(vec![1.5; 4]).unwrap();
        assert!(close(
            gamma_certificate_l2(lambda, common.l2()),
            gamma_certificate_l2_common(lambda, 1.5, 4),
            1e-15
        ));
    }

    #[test]
    fn second_stage_examples() {
        assert_eq!(second_stage_sample_size(1.0, 1.0, 1.0, E_INV, 1.0).unwrap(), 1);
        let base = second_stage_sample_size(1.0, 0.2, 0.1, 0.05, 1.0).unwrap() as f64;
        let halved = second_stage_sample_size(1.0, 0.1, 0.1, 0.05, 1.0).unwrap() as f64;
        assert!((halved / base - 4.0).abs() < 1e-3);
        assert_eq!(second_stage_sample_size(2f64.sqrt(), 0.5, 0.1, 0.05, 1.0).unwrap(), 4794);
    }

    #[test]
    fn report_carries_all_values() {
        let kappa = KappaVector::new(vec![1.0; 5]).unwrap();
        let rep = BoundReport::compute(BoundInputs::new(201, &kappa, 1.0, 0.1), Regularizer::L1, BoundForm::Exact)
            .unwrap();
        assert!(rep.odd_n_discard);
        assert_eq!(rep.selected, rep.gen_l1_exact);
        assert!(rep.rad_l1.is_some());
        assert_eq!(
            rep.gen_l2_simplified < rep.gen_l2_exact,
            rep.warnings.iter().any(|w| w.contains("simplified L2"))
        );
        let small = KappaVector::new(vec![1.0; 2]).unwrap();
        let rep = BoundReport::compute(BoundInputs::new(200, &small, 1.0, 0.1), Regularizer::L2, BoundForm::Exact)
            .unwrap();
        assert!(rep.rad_l1.is_none());
        assert!(BoundReport::compute(BoundInputs::new(200, &small, 1.0, 1.0), Regularizer::L2, BoundForm::Exact)
            .is_err());
    }

    #[test]
    fn rademacher_examples() {
        let zeros = vec![vec![0.0, 0.0]; 3];
        let r = empirical_rademacher(&zeros, Ball::L2(1.0), false, Expectation::Exhaustive).unwrap();
        assert_eq!(r.value, 0.0);
        let z = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let r = empirical_rademacher(&z, Ball::L2(1.0), false, Expectation::Exhaustive).unwrap();
        assert!(close(r.value, 0.5f64.sqrt(), 1e-15));
        assert_eq!(r.stderr, 0.0);
        let r = empirical_rademacher(&[vec![3.0, 4.0]], Ball::L1(1.0), false, Expectation::Exhaustive)
            .unwrap();
        assert_eq!(r.value, 4.0);
        // the nonnegative variant keeps only the positive part
        let r = empirical_rademacher(&[vec![3.0, 4.0]], Ball::L1(1.0), true, Expectation::Exhaustive)
            .unwrap();
        assert_eq!(r.value, 2.0);
        let big = vec![vec![1.0]; 21];
        assert!(empirical_rademacher(&big, Ball::L2(1.0), false, Expectation::Exhaustive).is_err());
        let mc = empirical_rademacher(&big, Ball::L2(1.0), false, Expectation::MonteCarlo { draws: 4000, seed: 1 })
            .unwrap();
        // E|sum of 21 signs| / 21
        let exact: f64 = (0..=21u32)
            .map(|k| {
                let c = (0..k).fold(1.0, |acc, i| acc * (21 - i) as f64 / (i + 1) as f64);
                c * (2.0 * k as f64 - 21.0).abs()
            })
            .sum::<f64>()
            / (1u64 << 21) as f64
            / 21.0;
        assert!((mc.value - exact).abs() < 4.0 * mc.stderr, "{mc:?} vs {exact}");
    }

    #[test]
    fn l1_formula_can_fail_on_sign_cube() {
        // m = 3 points whose p = 8 coordinates cover every sign pattern: for
        // any eps some coordinate equals sum |z| = 3, so the empirical
        // Rademacher average is exactly kappa = 1, above sqrt(log 8 / 3).
        let m = 3;
        let p = 1 << m;
        let z: Vec<Vec<f64>> = (0..m).map(|i| (0..p).map(|c| sign(c as u64, i)).collect()).collect();
        let est = empirical_rademacher(&z, Ball::L1(1.0), false, Expectation::Exhaustive).unwrap();
        assert_eq!(est.value, 1.0);
        let bound = rad_bound_l1(1.0, 1.0, 2 * m, p).unwrap();
        assert!(bound < est.value);
    }

    #[test]
    fn decoupling_examples() {
        let zero = PairFeatureTable::from_fn(vec![0.5, 0.5], 2, |_, _| vec![0.0, 0.0]).unwrap();
        let c = check_decoupling(&zero, Ball::L2(1.0), false, 4, Expectation::Exhaustive).unwrap();
        assert_eq!((c.lhs, c.rhs, c.holds), (0.0, 0.0, true));

        let vals = [[0.3, -1.0], [0.7, 0.2], [-0.4, 0.9]];
        let table = PairFeatureTable::from_fn(vec![0.2, 0.3, 0.5], 2, |a, b| {
            vals[a].iter().zip(&vals[b]).map(|(x, y)| x * y + (x + y)).collect()
        })
        .unwrap();
        let c = check_decoupling(&table, Ball::L2(1.0), false, 4, Expectation::Exhaustive).unwrap();
        assert!(c.holds, "{c:?}");
        assert!(c.lhs > 0.0);
        let c = check_decoupling(&table, Ball::L1(2.0), false, 6, Expectation::MonteCarlo { draws: 10_000, seed: 3 })
            .unwrap();
        assert!(c.holds, "{c:?}");
        assert!(check_decoupling(&table, Ball::L2(1.0), false, 5, Expectation::Exhaustive).is_err());
        assert!(PairFeatureTable::from_fn(vec![0.5, 0.5], 1, |a, _| vec![a as f64]).is_err());
    }

    #[test]
    fn contraction_examples() {
        let zeros = vec![vec![0.0]; 3];
        let c = check_contraction(&zeros, &[1.0, -1.0, 1.0], Expectation::Exhaustive).unwrap();
        assert!(close(c.lhs, 0.0, 1e-15) && c.rhs == 0.0 && c.holds, "{c:?}");

        let h = vec![vec![1.0, -1.0], vec![-1.0, 1.0]];
        let c = check_contraction(&h, &[1.0, 1.0], Expectation::Exhaustive).unwrap();
        assert!(c.holds, "{c:?}");

        let h = vec![
            vec![0.3, -1.7, 1.2, 0.0, 1.9],
            vec![-0.6, 0.4, -1.1, 2.0, 0.8],
            vec![1.5, -0.2, 0.9, -1.8, -0.5],
        ];
        let c = check_contraction(&h, &[1.0, -1.0, 1.0], Expectation::Exhaustive).unwrap();
        assert!(c.holds, "{c:?}");
        let big = vec![vec![0.0]; 21];
        assert!(check_contraction(&big, &[1.0; 21], Expectation::Exhaustive).is_err());
    }
}
