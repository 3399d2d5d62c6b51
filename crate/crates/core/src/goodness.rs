//! Kernel-goodness diagnostics for a learned combination and the second-stage
//! classifier trained with the combined kernel.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::kernels::{combined_kernel, dot, gram_matrix, BaseKernel, CombinationVector, KappaVector};
use crate::risk::LabeledDataset;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictorKind {
    MeanEmbedding,
    Trained,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoodnessReport {
    pub epsilon_hat: f64,
    pub gamma: f64,
    pub predictor_kind: PredictorKind,
}

/// `f(x) = sum_j alphas[j] K_mu(x, x_j)` over the support points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualPredictor {
    pub alphas: Vec<f64>,
    pub support: LabeledDataset,
    pub mu: CombinationVector,
}

impl DualPredictor {
    pub fn new(alphas: Vec<f64>, support: LabeledDataset, mu: CombinationVector) -> Result<Self> {
        check_len(support.len(), alphas.len())?;
        if alphas.iter().any(|a| !a.is_finite()) {
            return Err(Error::DegeneratePredictor("non-finite dual coefficient".into()));
        }
        Ok(Self { alphas, support, mu })
    }

    /// `alpha_j = y_j / m`: the empirical mean embedding `E[y Phi(x)]`.
    pub fn mean_embedding(reference: LabeledDataset, mu: CombinationVector) -> Result<Self> {
        if reference.is_empty() {
            return Err(Error::EmptyData);
        }
        let m = reference.len() as f64;
        let alphas = reference.labels().iter().map(|y| y / m).collect();
        Self::new(alphas, reference, mu)
    }

    pub fn predict(&self, kernels: &[BaseKernel], x: &[f64]) -> Result<f64> {
        let mut f = 0.0;
        for (a, xj) in self.alphas.iter().zip(self.support.points()) {
            if *a != 0.0 {
                f += a * combined_kernel(&self.mu, kernels, x, xj)?;
            }
        }
        Ok(f)
    }

    /// Predictions on every point of `data`.
    pub fn predict_all(&self, kernels: &[BaseKernel], data: &LabeledDataset) -> Result<Vec<f64>> {
        check_len(self.mu.len(), kernels.len())?;
        data.points()
            .par_iter()
            .map(|x| self.predict(kernels, x))
            .collect()
    }

    /// `sqrt(alpha^T G alpha)`, the RKHS norm of the predictor.
    pub fn rkhs_norm(&self, kernels: &[BaseKernel]) -> Result<f64> {
        let g = gram_matrix(&self.mu, kernels, self.support.points())?;
        let a = nalgebra::DVector::from_column_slice(&self.alphas);
        Ok(a.dot(&(&g * &a)).max(0.0).sqrt())
    }

    pub fn negated(&self) -> Self {
        Self {
            alphas: self.alphas.iter().map(|a| -a).collect(),
            ..self.clone()
        }
    }
}

fn check_mu(mu: &[f64], kernels: &[BaseKernel]) -> Result<()> {
    check_len(kernels.len(), mu.len())?;
    if mu.iter().any(|m| !(*m >= 0.0)) {
        return Err(Error::InvalidParameter("mu must be nonnegative".into()));
    }
    Ok(())
}

/// `mean_i [1 - y_i mean_j y_j w(x_j) K_mu(x_i, x_j)]_+` with `x_j` over
/// `reference`. The weight multiplies every term, so `w = 1` reproduces the
/// unweighted computation bit for bit.
fn weighted_embedding_risk<W>(
    mu: &[f64],
    eval: &LabeledDataset,
    reference: &LabeledDataset,
    kernels: &[BaseKernel],
    weight: W,
) -> Result<f64>
where
    W: Fn(&[f64]) -> f64 + Sync,
{
    check_mu(mu, kernels)?;
    if eval.is_empty() || reference.is_empty() {
        return Err(Error::EmptyData);
    }
    let m = reference.len() as f64;
    let weights: Vec<f64> = reference.points().iter().map(|x| weight(x)).collect();
    let hinges: Vec<f64> = (0..eval.len())
        .into_par_iter()
        .map(|i| {
            let (x, y) = eval.point(i);
            let mut s = 0.0;
            for (j, w) in weights.iter().enumerate() {
                let (xj, yj) = reference.point(j);
                s += yj * w * combined_kernel(mu, kernels, x, xj)?;
            }
            Ok((1.0 - y * (s / m)).max(0.0))
        })
        .collect::<Result<_>>()?;
    Ok(hinges.iter().sum::<f64>() / eval.len() as f64)
}

/// Hinge risk on `eval` of the unnormalized mean-embedding predictor built
/// from `reference`, reported at margin 1.
pub fn mean_embedding_goodness(
    mu: &[f64],
    eval: &LabeledDataset,
    reference: &LabeledDataset,
    kernels: &[BaseKernel],
) -> Result<GoodnessReport> {
    let epsilon_hat = weighted_embedding_risk(mu, eval, reference, kernels, |_| 1.0)?;
    Ok(GoodnessReport {
        epsilon_hat,
        gamma: 1.0,
        predictor_kind: PredictorKind::MeanEmbedding,
    })
}

/// `E_x[[1 - y E_x'[y' w(x') K_mu(x, x')]]_+]` on the empirical measure of
/// `data`.
pub fn similarity_goodness<W>(mu: &[f64], weight: W, data: &LabeledDataset, kernels: &[BaseKernel]) -> Result<f64>
where
    W: Fn(&[f64]) -> f64 + Sync,
{
    weighted_embedding_risk(mu, data, data, kernels, weight)
}

/// `<mu, kappa>^2 / n`: the regularization that matches the certified margin
/// `1/<mu, kappa>` at sample size `n`.
pub fn default_second_stage_reg(mu: &[f64], kappa: &KappaVector, n: usize) -> Result<f64> {
    check_len(kappa.len(), mu.len())?;
    let s = dot(mu, kappa);
    if !(s > 0.0) || n == 0 {
        return Err(Error::DegeneratePredictor("<mu, kappa> = 0".into()));
    }
    Ok(s * s / n as f64)
}

/// Stochastic subgradient descent on `(reg/2)||w||^2 + mean_i [1 - y_i f(x_i)]_+`
/// in the RKHS of `K_mu`, with step `1/(reg t)` and the returned predictor
/// averaged over the second half of the steps.
pub fn train_second_stage(
    mu: &[f64],
    train: &LabeledDataset,
    kernels: &[BaseKernel],
    reg: f64,
    steps: usize,
    seed: u64,
) -> Result<DualPredictor> {
    check_mu(mu, kernels)?;
    if train.is_empty() {
        return Err(Error::EmptyData);
    }
    if mu.iter().all(|&m| m == 0.0) {
        return Err(Error::DegeneratePredictor("mu = 0 gives the zero kernel".into()));
    }
    if !(reg > 0.0 && reg.is_finite()) {
        return Err(Error::InvalidParameter(format!("reg must be > 0, got {reg}")));
    }
    if steps == 0 {
        return Err(Error::InvalidParameter("steps must be >= 1".into()));
    }
    let n = train.len();
    let g = gram_matrix(mu, kernels, train.points())?;
    let y = train.labels();
    let mut r = rng::stream(seed, 0);
    // w_t = (1/(reg t)) sum_j counts[j] y_j Phi(x_j)
    let mut counts = vec![0.0; n];
    // f_t(x_i) * reg * t, kept incrementally
    let mut scaled_f = vec![0.0; n];
    let mut avg = vec![0.0; n];
    let start = steps / 2 + 1;
    for t in 1..=steps {
        let i = r.gen_range(0..n);
        let margin = y[i] * scaled_f[i] / (reg * t as f64);
        if margin < 1.0 {
            counts[i] += 1.0;
            let col = g.column(i);
            for (f, k) in scaled_f.iter_mut().zip(col.iter()) {
                *f += y[i] * k;
            }
        }
        if t >= start {
            let c = 1.0 / (reg * t as f64);
            for (a, k) in avg.iter_mut().zip(&counts) {
                *a += c * k;
            }
        }
    }
    let kept = (steps - start + 1) as f64;
    let alphas = avg.iter().zip(y).map(|(a, yi)| a * yi / kept).collect();
    DualPredictor::new(alphas, train.clone(), CombinationVector::new(mu.to_vec())?)
}

/// Fraction of `test` with `y f(x) <= 0`; a zero score counts as an error.
pub fn misclassification_rate(pred: &DualPredictor, test: &LabeledDataset, kernels: &[BaseKernel]) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::EmptyData);
    }
    let f = pred.predict_all(kernels, test)?;
    let errors = f.iter().zip(test.labels()).filter(|(f, y)| *y * *f <= 0.0).count();
    Ok(errors as f64 / test.len() as f64)
}

/// `mean [1 - y <w, Phi(x)> / gamma]_+` with `w` the predictor scaled to unit
/// RKHS norm.
pub fn unit_norm_goodness(
    pred: &DualPredictor,
    eval: &LabeledDataset,
    kernels: &[BaseKernel],
    gamma: f64,
) -> Result<GoodnessReport> {
    if eval.is_empty() {
        return Err(Error::EmptyData);
    }
    if !(gamma > 0.0) {
        return Err(Error::InvalidParameter(format!("gamma must be > 0, got {gamma}")));
    }
    let norm = pred.rkhs_norm(kernels)?;
    if !(norm > 0.0) {
        return Err(Error::DegeneratePredictor("predictor has zero RKHS norm".into()));
    }
    let f = pred.predict_all(kernels, eval)?;
    let total: f64 = f
        .iter()
        .zip(eval.labels())
        .map(|(f, y)| (1.0 - y * f / (norm * gamma)).max(0.0))
        .sum();
    Ok(GoodnessReport {
        epsilon_hat: total / eval.len() as f64,
        gamma,
        predictor_kind: PredictorKind::Trained,
    })
}
