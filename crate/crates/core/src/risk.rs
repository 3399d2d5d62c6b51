//! Pairwise hinge risk: the U-statistic empirical risk over training pairs
//! and Monte Carlo estimates of the population risk over independent pairs.

use std::sync::Arc;

use rand::seq::index;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::harness::planted::PlantedModel;
use crate::kernels::{dot, kspace_features, BaseKernel, KSpacePair};
use crate::rng;

/// Above this many unordered pairs the empirical risk is computed on a
/// uniform without-replacement subsample of exactly this many pairs.
pub const MAX_FULL_PAIRS: usize = 2_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    points: Vec<Vec<f64>>,
    labels: Vec<f64>,
}

impl LabeledDataset {
    pub fn new(points: Vec<Vec<f64>>, labels: Vec<f64>) -> Result<Self> {
        check_len(points.len(), labels.len())?;
        if let Some(y) = labels.iter().find(|&&y| y != 1.0 && y != -1.0) {
            return Err(Error::InvalidParameter(format!("label {y} is not +1/-1")));
        }
        if let Some(first) = points.first() {
            let d = first.len();
            for p in &points {
                check_len(d, p.len())?;
            }
        }
        Ok(Self { points, labels })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, Vec::len)
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn point(&self, i: usize) -> (&[f64], f64) {
        (&self.points[i], self.labels[i])
    }

    /// Reorders samples; `order` must be a permutation of `0..len`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            points: order.iter().map(|&i| self.points[i].clone()).collect(),
            labels: order.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// Mean of nonnegative terms, independent of the order they arrive in.
pub(crate) fn ordered_mean(mut values: Vec<f64>) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_unstable_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

/// Maps a lexicographic index over unordered pairs `i < j` of `n` items back
/// to the pair.
pub fn pair_from_index(k: usize, n: usize) -> (usize, usize) {
    let start = |i: usize| i * (2 * n - i - 1) / 2;
    let nf = n as f64;
    let disc = (2.0 * nf - 1.0) * (2.0 * nf - 1.0) - 8.0 * k as f64;
    let mut i = (((2.0 * nf - 1.0) - disc.max(0.0).sqrt()) / 2.0).floor().max(0.0) as usize;
    i = i.min(n.saturating_sub(2));
    while i > 0 && start(i) > k {
        i -= 1;
    }
    while i + 1 < n - 1 && start(i + 1) <= k {
        i += 1;
    }
    (i, i + 1 + (k - start(i)))
}

pub fn pair_count(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Materialized signed K-space features `y_i y_j z(x_i, x_j)`, one row per
/// pair.
#[derive(Debug, Clone)]
pub struct PairSet {
    p: usize,
    signed: Vec<f64>,
    subsampled: bool,
}

impl PairSet {
    /// All unordered training pairs, or a uniform subsample of
    /// [`MAX_FULL_PAIRS`] of them when there are more.
    pub fn build(data: &LabeledDataset, kernels: &[BaseKernel], seed: u64) -> Result<Self> {
        Self::with_budget(data, kernels, MAX_FULL_PAIRS, seed)
    }

    pub fn with_budget(
        data: &LabeledDataset,
        kernels: &[BaseKernel],
        budget: usize,
        seed: u64,
    ) -> Result<Self> {
        let n = data.len();
        if n < 2 {
            return Err(Error::TooFewSamples {
                required: 2,
                actual: n,
            });
        }
        let total = pair_count(n);
        let (pairs, subsampled): (Vec<(usize, usize)>, bool) = if total <= budget {
            ((0..total).map(|k| pair_from_index(k, n)).collect(), false)
        } else {
            let mut r = rng::stream(seed, 0x9a17);
            let mut picked = index::sample(&mut r, total, budget).into_vec();
            picked.sort_unstable();
            (picked.into_iter().map(|k| pair_from_index(k, n)).collect(), true)
        };
        let signed = signed_rows(data, kernels, &pairs, |d, i, j| (d.point(i), d.point(j)))?;
        Ok(Self {
            p: kernels.len(),
            signed,
            subsampled,
        })
    }

    pub fn from_pairs(pairs: &[KSpacePair]) -> Result<Self> {
        let p = pairs.first().map_or(0, |q| q.z.len());
        let mut signed = Vec::with_capacity(p * pairs.len());
        for q in pairs {
            check_len(p, q.z.len())?;
            signed.extend(q.signed());
        }
        Ok(Self {
            p,
            signed,
            subsampled: false,
        })
    }

    pub(crate) fn from_signed(p: usize, signed: Vec<f64>) -> Self {
        Self {
            p,
            signed,
            subsampled: false,
        }
    }

    pub fn len(&self) -> usize {
        if self.p == 0 {
            0
        } else {
            self.signed.len() / self.p
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn is_subsampled(&self) -> bool {
        self.subsampled
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.signed.chunks_exact(self.p)
    }

    pub fn hinges(&self, mu: &[f64]) -> Result<Vec<f64>> {
        check_len(self.p, mu.len())?;
        Ok(self
            .signed
            .par_chunks_exact(self.p)
            .map(|a| (1.0 - dot(mu, a)).max(0.0))
            .collect())
    }

    /// Mean pair hinge; exact under any reordering of the pairs.
    pub fn risk(&self, mu: &[f64]) -> Result<f64> {
        Ok(ordered_mean(self.hinges(mu)?))
    }

    /// Mean and standard error of the pair hinge, for pairs drawn i.i.d.
    pub fn estimate(&self, mu: &[f64]) -> Result<RiskEstimate> {
        let h = self.hinges(mu)?;
        let m = h.len();
        let value = ordered_mean(h.clone());
        let stderr = if m > 1 {
            let ss: f64 = h.iter().map(|v| (v - value) * (v - value)).sum();
            (ss / (m - 1) as f64).sqrt() / (m as f64).sqrt()
        } else {
            0.0
        };
        Ok(RiskEstimate {
            value,
            stderr,
            num_samples: m,
        })
    }

    /// Sequential single pass returning the mean hinge and writing the
    /// hinge subgradient into `grad`.
    pub(crate) fn risk_and_subgradient(&self, mu: &[f64], grad: &mut [f64]) -> f64 {
        hinge_pass(self.p, &self.signed, mu, grad)
    }
}

/// Mean hinge over signed rows and its subgradient. A margin of exactly 1
/// contributes 0 to the subgradient.
pub(crate) fn hinge_pass(p: usize, rows: &[f64], mu: &[f64], grad: &mut [f64]) -> f64 {
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut risk = 0.0;
    for a in rows.chunks_exact(p) {
        let margin = dot(mu, a);
        if margin < 1.0 {
            risk += 1.0 - margin;
            for (g, v) in grad.iter_mut().zip(a) {
                *g -= v;
            }
        }
    }
    let m = (rows.len() / p) as f64;
    grad.iter_mut().for_each(|g| *g /= m);
    risk / m
}

fn signed_rows<F>(
    data: &LabeledDataset,
    kernels: &[BaseKernel],
    pairs: &[(usize, usize)],
    fetch: F,
) -> Result<Vec<f64>>
where
    F: for<'a> Fn(&'a LabeledDataset, usize, usize) -> ((&'a [f64], f64), (&'a [f64], f64))
        + Sync,
{
    let p = kernels.len();
    if p == 0 {
        return Err(Error::InvalidKernel("need at least one base kernel".into()));
    }
    let mut signed = vec![0.0; p * pairs.len()];
    signed
        .par_chunks_exact_mut(p)
        .zip(pairs.par_iter())
        .try_for_each(|(row, &(i, j))| -> Result<()> {
            let ((xi, yi), (xj, yj)) = fetch(data, i, j);
            kspace_features(kernels, xi, xj, row)?;
            let s = yi * yj;
            row.iter_mut().for_each(|v| *v *= s);
            Ok(())
        })?;
    Ok(signed)
}

/// `[1 - yy' <mu, z>]_+`.
pub fn pair_hinge(mu: &[f64], pair: &KSpacePair) -> Result<f64> {
    check_len(pair.z.len(), mu.len())?;
    Ok((1.0 - pair.label_product * dot(mu, &pair.z)).max(0.0))
}

/// The U-statistic `2/(n(n-1)) sum_{i<j} [1 - y_i y_j <mu, z(x_i, x_j)>]_+`.
pub fn empirical_risk(mu: &[f64], data: &LabeledDataset, kernels: &[BaseKernel]) -> Result<f64> {
    check_len(kernels.len(), mu.len())?;
    PairSet::build(data, kernels, 0)?.risk(mu)
}

/// Normalization of the diagonal term `sum_i [1 - <mu, z(x_i, x_i)>]_+`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiagonalNormalization {
    /// `2 / (n (n + 1))`
    #[default]
    AsPrinted,
    /// `1 / n`
    Mean,
}

pub fn diagonal_risk(
    mu: &[f64],
    data: &LabeledDataset,
    kernels: &[BaseKernel],
    norm: DiagonalNormalization,
) -> Result<f64> {
    check_len(kernels.len(), mu.len())?;
    let n = data.len();
    if n < 2 {
        return Err(Error::TooFewSamples {
            required: 2,
            actual: n,
        });
    }
    let mut z = vec![0.0; kernels.len()];
    let mut terms = Vec::with_capacity(n);
    for x in data.points() {
        kspace_features(kernels, x, x, &mut z)?;
        terms.push((1.0 - dot(mu, &z)).max(0.0));
    }
    terms.sort_unstable_by(f64::total_cmp);
    let sum: f64 = terms.iter().sum();
    let nf = n as f64;
    Ok(match norm {
        DiagonalNormalization::AsPrinted => 2.0 * sum / (nf * (nf + 1.0)),
        DiagonalNormalization::Mean => sum / nf,
    })
}

/// Empirical risk plus the diagonal term.
pub fn empirical_risk_with_diagonal(
    mu: &[f64],
    data: &LabeledDataset,
    kernels: &[BaseKernel],
    norm: DiagonalNormalization,
) -> Result<f64> {
    Ok(empirical_risk(mu, data, kernels)? + diagonal_risk(mu, data, kernels, norm)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimate {
    pub value: f64,
    pub stderr: f64,
    pub num_samples: usize,
}

#[derive(Debug, Clone)]
pub enum SamplerSource {
    /// Uniform with replacement over a finite dataset.
    Empirical(Arc<LabeledDataset>),
    Planted(Arc<PlantedModel>),
}

/// Draws independent labeled pairs `(x, y), (x', y')` from `D x D`.
#[derive(Debug, Clone)]
pub struct PairSampler {
    pub source: SamplerSource,
    pub seed: u64,
    /// For finite-support sources: average over every ordered pair instead
    /// of sampling.
    pub exact_enumeration: bool,
}

impl PairSampler {
    pub fn empirical(data: LabeledDataset, seed: u64) -> Self {
        Self {
            source: SamplerSource::Empirical(Arc::new(data)),
            seed,
            exact_enumeration: false,
        }
    }

    pub fn planted(model: PlantedModel, seed: u64) -> Self {
        Self {
            source: SamplerSource::Planted(Arc::new(model)),
            seed,
            exact_enumeration: false,
        }
    }

    pub fn exact(mut self) -> Self {
        self.exact_enumeration = true;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn draw_point(&self, r: &mut rng::Rng) -> (Vec<f64>, f64) {
        match &self.source {
            SamplerSource::Empirical(d) => {
                let i = r.gen_range(0..d.len());
                (d.points()[i].clone(), d.labels()[i])
            }
            SamplerSource::Planted(m) => m.sample(r),
        }
    }

    /// Draws `count` points from stream `stream` of the sampler's seed.
    pub fn draw_dataset(&self, count: usize, stream: u64) -> Result<LabeledDataset> {
        let mut r = rng::stream(self.seed, stream);
        let (points, labels) = (0..count).map(|_| self.draw_point(&mut r)).unzip();
        LabeledDataset::new(points, labels)
    }

    /// Signed K-space features of `count` independent pairs.
    pub fn draw_pairs(&self, kernels: &[BaseKernel], count: usize) -> Result<PairSet> {
        if count == 0 {
            return Err(Error::InvalidParameter("num_pairs must be >= 1".into()));
        }
        let mut r = rng::stream(self.seed, u64::MAX);
        let mut points = Vec::with_capacity(2 * count);
        let mut labels = Vec::with_capacity(2 * count);
        for _ in 0..2 * count {
            let (x, y) = self.draw_point(&mut r);
            points.push(x);
            labels.push(y);
        }
        let data = LabeledDataset::new(points, labels)?;
        let pairs: Vec<(usize, usize)> = (0..count).map(|k| (2 * k, 2 * k + 1)).collect();
        let signed = signed_rows(&data, kernels, &pairs, |d, i, j| (d.point(i), d.point(j)))?;
        Ok(PairSet::from_signed(kernels.len(), signed))
    }

    /// Every ordered pair of a finite dataset, diagonal included.
    fn enumerate_pairs(data: &LabeledDataset, kernels: &[BaseKernel]) -> Result<PairSet> {
        let n = data.len();
        if n == 0 {
            return Err(Error::EmptyData);
        }
        let pairs: Vec<(usize, usize)> =
            (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
        let signed = signed_rows(data, kernels, &pairs, |d, i, j| (d.point(i), d.point(j)))?;
        Ok(PairSet::from_signed(kernels.len(), signed))
    }
}

/// Estimates `R(mu) = E[[1 - yy' K_mu(x, x')]_+]` over independent pairs.
pub fn true_risk_mc(
    mu: &[f64],
    sampler: &PairSampler,
    kernels: &[BaseKernel],
    num_pairs: usize,
) -> Result<RiskEstimate> {
    check_len(kernels.len(), mu.len())?;
    match (&sampler.source, sampler.exact_enumeration) {
        (SamplerSource::Empirical(d), true) => {
            let pairs = PairSampler::enumerate_pairs(d, kernels)?;
            Ok(RiskEstimate {
                value: pairs.risk(mu)?,
                stderr: 0.0,
                num_samples: pairs.len(),
            })
        }
        (SamplerSource::Planted(_), true) => Err(Error::Unsupported(
            "exact enumeration needs a finite-support sampler".into(),
        )),
        _ => sampler.draw_pairs(kernels, num_pairs)?.estimate(mu),
    }
}

/// Average of the pair hinge over all `n^2` ordered pairs of `data`.
pub fn ordered_pair_risk(mu: &[f64], data: &LabeledDataset, kernels: &[BaseKernel]) -> Result<f64> {
    check_len(kernels.len(), mu.len())?;
    PairSampler::enumerate_pairs(data, kernels)?.risk(mu)
}

/// `R(mu) <= epsilon`.
pub fn is_combination_good(risk_value: f64, epsilon: f64) -> bool {
    risk_value <= epsilon
}
