//! Synthetic data with a planted good combination.
//!
//! Points live in `[-1, 1]^p` and base kernel `j` is the linear kernel on
//! coordinate `j` (bound 1). On the informative coordinates `S` a point
//! carries its label with magnitude drawn uniformly from
//! `[margin, margin + band]`; the rest is uniform noise. Any `mu_o` supported on `S` with `margin^2 * sum(mu_o) >= 1` then
//! has zero pair hinge on every noiseless pair.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{BaseKernel, CombinationVector};
use crate::risk::{true_risk_mc, LabeledDataset, PairSampler, RiskEstimate};
use crate::rng;

/// Pairs used to confirm the planted risk after generation.
pub const PLANT_CHECK_PAIRS: usize = 100_000;

fn default_margin() -> f64 {
    0.8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedSpec {
    pub p: usize,
    /// Informative coordinates.
    pub support: Vec<usize>,
    /// Planted combination; defaults to `1 / (|S| margin^2)` on the support.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_o: Option<CombinationVector>,
    /// Smallest magnitude of an informative coordinate.
    #[serde(default = "default_margin")]
    pub margin: f64,
    /// Width of the informative magnitude range; defaults to `1 - margin`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band: Option<f64>,
    #[serde(default)]
    pub target_eps: f64,
    #[serde(default)]
    pub label_noise: f64,
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
}

impl PlantedSpec {
    pub fn new(p: usize, support: Vec<usize>, n: usize, seed: u64) -> Self {
        Self {
            p,
            support,
            mu_o: None,
            margin: default_margin(),
            band: None,
            target_eps: 0.0,
            label_noise: 0.0,
            n,
            seed,
        }
    }

    /// The `mu_o` used for this spec.
    pub fn planted_mu(&self) -> Result<CombinationVector> {
        if let Some(mu) = &self.mu_o {
            return Ok(mu.clone());
        }
        let mut mu = vec![0.0; self.p];
        let w = 1.0 / (self.support.len() as f64 * self.margin * self.margin);
        for &j in &self.support {
            mu[j] = w;
        }
        CombinationVector::new(mu)
    }

    fn validate(&self) -> Result<Vec<String>> {
        let mut warnings = Vec::new();
        if self.p == 0 || self.support.is_empty() {
            return Err(Error::InvalidParameter("need p >= 1 and a nonempty support".into()));
        }
        if let Some(&j) = self.support.iter().find(|&&j| j >= self.p) {
            return Err(Error::InvalidParameter(format!("support index {j} >= p = {}", self.p)));
        }
        if !(self.margin > 0.0 && self.margin <= 1.0) {
            return Err(Error::InvalidParameter(format!("margin must lie in (0, 1], got {}", self.margin)));
        }
        if let Some(b) = self.band {
            if !(b >= 0.0 && self.margin + b <= 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "band must lie in [0, 1 - margin], got {b}"
                )));
            }
        }
        if !(0.0..=0.5).contains(&self.label_noise) {
            return Err(Error::InvalidParameter(format!(
                "label_noise must lie in [0, 0.5), got {}",
                self.label_noise
            )));
        }
        if self.label_noise >= 0.5 {
            warnings.push("label_noise = 0.5: labels carry no information".into());
        }
        if !(self.target_eps >= 0.0) {
            return Err(Error::InvalidParameter("target_eps must be >= 0".into()));
        }
        if let Some(mu) = &self.mu_o {
            if mu.len() != self.p {
                return Err(Error::DimensionMismatch {
                    expected: self.p,
                    actual: mu.len(),
                });
            }
        }
        Ok(warnings)
    }
}

/// The generative distribution behind a [`PlantedSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedModel {
    pub p: usize,
    pub support: Vec<usize>,
    pub margin: f64,
    pub band: f64,
    pub label_noise: f64,
}

impl PlantedModel {
    pub fn sample(&self, r: &mut rng::Rng) -> (Vec<f64>, f64) {
        let y = if r.gen::<bool>() { 1.0 } else { -1.0 };
        let mut x: Vec<f64> = (0..self.p).map(|_| r.gen_range(-1.0..=1.0)).collect();
        for &j in &self.support {
            x[j] = y * r.gen_range(self.margin..=self.margin + self.band);
        }
        let flip = self.label_noise > 0.0 && r.gen::<f64>() < self.label_noise;
        (x, if flip { -y } else { y })
    }

    /// One coordinate-restricted linear kernel per coordinate.
    pub fn kernels(&self) -> Vec<BaseKernel> {
        (0..self.p)
            .map(|j| {
                BaseKernel::linear(1.0)
                    .and_then(|k| k.on_features(vec![j]))
                    .expect("unit linear kernel is valid")
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Planted {
    pub data: LabeledDataset,
    pub model: PlantedModel,
    pub kernels: Vec<BaseKernel>,
    pub mu_o: CombinationVector,
    /// Monte Carlo risk of `mu_o` under the generative distribution.
    pub planted_risk: RiskEstimate,
    pub warnings: Vec<String>,
}

impl Planted {
    /// A sampler over fresh independent points.
    pub fn sampler(&self, seed: u64) -> PairSampler {
        PairSampler::planted(self.model.clone(), seed)
    }
}

/// Draws `spec.n` points and checks that `mu_o` meets `target_eps` on fresh
/// pairs.
pub fn gen_planted(spec: &PlantedSpec) -> Result<Planted> {
    let mut warnings = spec.validate()?;
    let mu_o = spec.planted_mu()?;
    // the worst noiseless pair has every informative coordinate at +-margin
    let worst: f64 = spec.support.iter().map(|&j| mu_o[j]).sum::<f64>() * spec.margin * spec.margin;
    if spec.target_eps == 0.0 && spec.label_noise == 0.0 && worst < 1.0 - 1e-12 {
        let off: f64 = (0..spec.p).filter(|j| !spec.support.contains(j)).map(|j| mu_o[j]).sum();
        if off == 0.0 {
            return Err(Error::InfeasiblePlant(format!(
                "margin {} gives pair margin {worst} < 1 for mu_o; need margin^2 * sum(mu_o) >= 1",
                spec.margin
            )));
        }
    }
    let model = PlantedModel {
        p: spec.p,
        support: spec.support.clone(),
        margin: spec.margin,
        band: spec.band.unwrap_or(1.0 - spec.margin),
        label_noise: spec.label_noise,
    };
    let kernels = model.kernels();
    let sampler = PairSampler::planted(model.clone(), spec.seed);
    let data = sampler.draw_dataset(spec.n, 0)?;
    let check = sampler.with_seed(rng::mix(spec.seed, 0x91a7));
    let planted_risk = true_risk_mc(&mu_o, &check, &kernels, PLANT_CHECK_PAIRS)?;
    if planted_risk.value > spec.target_eps + 3.0 * planted_risk.stderr {
        return Err(Error::InfeasiblePlant(format!(
            "planted risk {:.4} (stderr {:.4}) exceeds target {}",
            planted_risk.value, planted_risk.stderr, spec.target_eps
        )));
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    warnings.dedup();
    Ok(Planted {
        data,
        model,
        kernels,
        mu_o,
        planted_risk,
        warnings,
    })
}
