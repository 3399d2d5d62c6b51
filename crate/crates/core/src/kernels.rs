//! Base kernels, the pairwise K-space feature map and combined kernels.
//!
//! A point is a plain `&[f64]`. Every base kernel may be restricted to a
//! subset of the point's coordinates, which is how a single input space is
//! split into per-feature-group kernels. Precomputed tables read a row index
//! from one coordinate of the point.
//!
//! Each kernel carries a declared bound `kappa_i^2` and evaluation enforces
//! the two-sided bound `|K_i(x, x')| <= kappa_i^2`. For a PSD kernel this is
//! implied by `K_i(x, x) <= kappa_i^2` (Cauchy-Schwarz) and it is what makes
//! `||z||_2 <= ||kappa||_2` hold for every pair feature `z`.

use std::ops::Deref;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Relative slack allowed when checking a value against a declared bound.
const BOUND_SLACK: f64 = 1e-12;

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// A symmetric precomputed kernel matrix indexed by sample id.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelTable {
    size: usize,
    values: Vec<f64>,
}

impl KernelTable {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let size = rows.len();
        if size == 0 {
            return Err(Error::InvalidKernel("kernel table is empty".into()));
        }
        let mut values = Vec::with_capacity(size * size);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != size {
                return Err(Error::InvalidKernel(format!(
                    "kernel table row {i} has {} entries, expected {size}",
                    row.len()
                )));
            }
            values.extend_from_slice(row);
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidKernel(format!("non-finite table entry {v}")));
        }
        let scale = values.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1.0);
        for i in 0..size {
            for j in (i + 1)..size {
                let (a, b) = (values[i * size + j], values[j * size + i]);
                if (a - b).abs() > 1e-12 * scale {
                    return Err(Error::InvalidKernel(format!(
                        "kernel table not symmetric at ({i},{j}): {a} vs {b}"
                    )));
                }
            }
        }
        Ok(Self { size, values })
    }

    /// Reads a square matrix from a headerless CSV file.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| Error::Parse {
                path: path.to_owned(),
                line: 0,
                msg: e.to_string(),
            })?;
        let mut rows = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::Parse {
                path: path.to_owned(),
                line: line + 1,
                msg: e.to_string(),
            })?;
            let row = record
                .iter()
                .map(|f| {
                    f.parse::<f64>().map_err(|e| Error::Parse {
                        path: path.to_owned(),
                        line: line + 1,
                        msg: format!("bad table entry {f:?}: {e}"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Self::new(rows)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.size + j]
    }

    fn index_of(&self, coord: f64) -> Result<usize> {
        if coord < 0.0 || coord.fract() != 0.0 || coord >= self.size as f64 {
            return Err(Error::TableIndex {
                index: coord,
                size: self.size,
            });
        }
        Ok(coord as usize)
    }

    fn min_eigenvalue(&self) -> f64 {
        let m = DMatrix::from_row_slice(self.size, self.size, &self.values);
        m.symmetric_eigenvalues().min()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelKind {
    /// `<x, x'>`
    Linear,
    /// `exp(-||x - x'||^2 / width^2)`
    Rbf { width: f64 },
    /// `(<x, x'> + offset)^degree`
    Polynomial { degree: u32, offset: f64 },
    /// Lookup in a precomputed table; the point coordinate holds the row id.
    Table(Arc<KernelTable>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaseKernel {
    kind: KernelKind,
    bound: f64,
    features: Option<Vec<usize>>,
}

impl BaseKernel {
    pub fn linear(domain_radius: f64) -> Result<Self> {
        positive("domain_radius", domain_radius)?;
        Self::with_bound(KernelKind::Linear, domain_radius * domain_radius)
    }

    pub fn rbf(width: f64) -> Result<Self> {
        Self::with_bound(KernelKind::Rbf { width }, 1.0)
    }

    pub fn polynomial(degree: u32, offset: f64, domain_radius: f64) -> Result<Self> {
        positive("domain_radius", domain_radius)?;
        let bound = (domain_radius * domain_radius + offset).powi(degree as i32);
        Self::with_bound(KernelKind::Polynomial { degree, offset }, bound)
    }

    pub fn table(table: KernelTable, bound: f64) -> Result<Self> {
        Self::with_bound(KernelKind::Table(Arc::new(table)), bound)
    }

    /// Builds a kernel with an explicitly declared bound `kappa_i^2`.
    pub fn with_bound(kind: KernelKind, bound: f64) -> Result<Self> {
        positive("bound", bound)?;
        match &kind {
            KernelKind::Linear => {}
            KernelKind::Rbf { width } => {
                positive("rbf width", *width)?;
                if bound < 1.0 {
                    return Err(Error::InvalidKernel(format!(
                        "rbf kernel has K(x,x) = 1 but declared bound {bound} < 1"
                    )));
                }
            }
            KernelKind::Polynomial { offset, .. } => {
                if !(offset.is_finite() && *offset >= 0.0) {
                    return Err(Error::InvalidKernel(format!(
                        "polynomial offset must be >= 0, got {offset}"
                    )));
                }
            }
            KernelKind::Table(t) => {
                let max = t.max_abs();
                if max > bound * (1.0 + BOUND_SLACK) {
                    return Err(Error::InvalidKernel(format!(
                        "table maximum {max} exceeds declared bound {bound}"
                    )));
                }
                let floor = t.min_eigenvalue();
                if floor < -1e-8 * t.size() as f64 * bound {
                    return Err(Error::InvalidKernel(format!(
                        "table is not positive semidefinite (min eigenvalue {floor})"
                    )));
                }
            }
        }
        Ok(Self {
            kind,
            bound,
            features: None,
        })
    }

    /// Restricts the kernel to the given point coordinates.
    pub fn on_features(mut self, features: Vec<usize>) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::InvalidKernel("empty feature subset".into()));
        }
        if matches!(self.kind, KernelKind::Table(_)) && features.len() != 1 {
            return Err(Error::InvalidKernel(
                "table kernels read exactly one index coordinate".into(),
            ));
        }
        self.features = Some(features);
        Ok(self)
    }

    pub fn kind(&self) -> &KernelKind {
        &self.kind
    }

    /// The declared bound `kappa_i^2`.
    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn features(&self) -> Option<&[usize]> {
        self.features.as_deref()
    }

    pub fn eval(&self, x: &[f64], x2: &[f64]) -> Result<f64> {
        let value = match &self.features {
            None => {
                check_len(x.len(), x2.len())?;
                self.raw(x.iter().copied(), x2.iter().copied(), x, x2)?
            }
            Some(idx) => {
                let need = idx.iter().max().map_or(0, |m| m + 1);
                for len in [x.len(), x2.len()] {
                    if len < need {
                        return Err(Error::DimensionMismatch {
                            expected: need,
                            actual: len,
                        });
                    }
                }
                self.raw(
                    idx.iter().map(|&i| x[i]),
                    idx.iter().map(|&i| x2[i]),
                    x,
                    x2,
                )?
            }
        };
        if value.abs() > self.bound * (1.0 + BOUND_SLACK) || value.is_nan() {
            return Err(Error::BoundExceeded {
                value,
                bound: self.bound,
            });
        }
        Ok(value)
    }

    fn raw<I, J>(&self, a: I, b: J, x: &[f64], x2: &[f64]) -> Result<f64>
    where
        I: Iterator<Item = f64>,
        J: Iterator<Item = f64>,
    {
        Ok(match &self.kind {
            KernelKind::Linear => a.zip(b).fold(0.0, |acc, (u, v)| acc + u * v),
            KernelKind::Rbf { width } => {
                let d2 = a.zip(b).fold(0.0, |acc, (u, v)| acc + (u - v) * (u - v));
                (-d2 / (width * width)).exp()
            }
            KernelKind::Polynomial { degree, offset } => {
                let ip = a.zip(b).fold(0.0, |acc, (u, v)| acc + u * v);
                (ip + offset).powi(*degree as i32)
            }
            KernelKind::Table(t) => {
                let col = self.features.as_ref().map_or(0, |f| f[0]);
                let (Some(&ci), Some(&cj)) = (x.get(col), x2.get(col)) else {
                    return Err(Error::DimensionMismatch {
                        expected: col + 1,
                        actual: x.len().min(x2.len()),
                    });
                };
                t.get(t.index_of(ci)?, t.index_of(cj)?)
            }
        })
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if !(v.is_finite() && v > 0.0) {
        return Err(Error::InvalidKernel(format!("{name} must be > 0, got {v}")));
    }
    Ok(())
}

/// Evaluates `K_i(x, x2)`.
pub fn eval_kernel(k: &BaseKernel, x: &[f64], x2: &[f64]) -> Result<f64> {
    k.eval(x, x2)
}

/// One kernel entry of a JSON configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum KernelConfig {
    Linear {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        domain_radius: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bound: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        features: Option<Vec<usize>>,
    },
    Rbf {
        width: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bound: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        features: Option<Vec<usize>>,
    },
    Poly {
        degree: u32,
        #[serde(default)]
        offset: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        domain_radius: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bound: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        features: Option<Vec<usize>>,
    },
    Table {
        path: PathBuf,
        bound: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        features: Option<Vec<usize>>,
    },
}

impl KernelConfig {
    /// Builds the kernel; relative table paths resolve against `base_dir`.
    pub fn build(&self, base_dir: &Path) -> Result<BaseKernel> {
        let (kernel, features) = match self {
            KernelConfig::Linear {
                domain_radius,
                bound,
                features,
            } => {
                let k = match bound {
                    Some(b) => BaseKernel::with_bound(KernelKind::Linear, *b)?,
                    None => BaseKernel::linear(domain_radius.unwrap_or(1.0))?,
                };
                (k, features)
            }
            KernelConfig::Rbf {
                width,
                bound,
                features,
            } => (
                BaseKernel::with_bound(KernelKind::Rbf { width: *width }, bound.unwrap_or(1.0))?,
                features,
            ),
            KernelConfig::Poly {
                degree,
                offset,
                domain_radius,
                bound,
                features,
            } => {
                let k = match bound {
                    Some(b) => BaseKernel::with_bound(
                        KernelKind::Polynomial {
                            degree: *degree,
                            offset: *offset,
                        },
                        *b,
                    )?,
                    None => BaseKernel::polynomial(*degree, *offset, domain_radius.unwrap_or(1.0))?,
                };
                (k, features)
            }
            KernelConfig::Table {
                path,
                bound,
                features,
            } => {
                let full = if path.is_absolute() {
                    path.clone()
                } else {
                    base_dir.join(path)
                };
                (BaseKernel::table(KernelTable::from_csv(&full)?, *bound)?, features)
            }
        };
        match features {
            Some(f) => kernel.on_features(f.clone()),
            None => Ok(kernel),
        }
    }
}

/// Loads a JSON array of kernel entries.
pub fn load_kernels(path: &Path) -> Result<Vec<BaseKernel>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let configs: Vec<KernelConfig> = serde_json::from_str(&text)?;
    let base = path.parent().unwrap_or(Path::new("."));
    build_kernels(&configs, base)
}

pub fn build_kernels(configs: &[KernelConfig], base_dir: &Path) -> Result<Vec<BaseKernel>> {
    if configs.is_empty() {
        return Err(Error::InvalidKernel("need at least one base kernel".into()));
    }
    configs.iter().map(|c| c.build(base_dir)).collect()
}

/// `(kappa_1^2, ..., kappa_p^2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KappaVector(Vec<f64>);

impl KappaVector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidParameter("empty kappa vector".into()));
        }
        if let Some(v) = entries.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "kappa entries must be > 0, got {v}"
            )));
        }
        Ok(Self(entries))
    }

    pub fn from_kernels(kernels: &[BaseKernel]) -> Self {
        Self(kernels.iter().map(BaseKernel::bound).collect())
    }

    pub fn l2(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn linf(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl Deref for KappaVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// `(||kappa||_2, ||kappa||_inf)`.
pub fn kappa_norms(kappa: &KappaVector) -> (f64, f64) {
    (kappa.l2(), kappa.linf())
}

/// A nonnegative combination weight vector `mu`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CombinationVector(Vec<f64>);

impl CombinationVector {
    pub fn new(mu: Vec<f64>) -> Result<Self> {
        if let Some(v) = mu.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "combination weights must be finite and >= 0, got {v}"
            )));
        }
        Ok(Self(mu))
    }

    pub fn zeros(p: usize) -> Self {
        Self(vec![0.0; p])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn l1(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn l2(&self) -> f64 {
        dot(&self.0, &self.0).sqrt()
    }

    /// Number of coordinates above `rel_threshold * ||mu||_1`.
    pub fn support_size(&self, rel_threshold: f64) -> usize {
        let cut = rel_threshold * self.l1();
        self.0.iter().filter(|&&v| v > cut && v > 0.0).count()
    }
}

impl Deref for CombinationVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// The K-space feature of a labeled pair.
#[derive(Debug, Clone, PartialEq)]
pub struct KSpacePair {
    pub z: Vec<f64>,
    pub label_product: f64,
}

impl KSpacePair {
    /// `label_product * z`, the only form the hinge ever needs.
    pub fn signed(&self) -> Vec<f64> {
        self.z.iter().map(|v| v * self.label_product).collect()
    }
}

/// Writes `z(x, x2)` into `out`.
pub fn kspace_features(kernels: &[BaseKernel], x: &[f64], x2: &[f64], out: &mut [f64]) -> Result<()> {
    check_len(kernels.len(), out.len())?;
    for (slot, k) in out.iter_mut().zip(kernels) {
        *slot = k.eval(x, x2)?;
    }
    Ok(())
}

pub fn kspace_map(
    kernels: &[BaseKernel],
    sample_i: (&[f64], f64),
    sample_j: (&[f64], f64),
) -> Result<KSpacePair> {
    if kernels.is_empty() {
        return Err(Error::InvalidKernel("need at least one base kernel".into()));
    }
    let mut z = vec![0.0; kernels.len()];
    kspace_features(kernels, sample_i.0, sample_j.0, &mut z)?;
    Ok(KSpacePair {
        z,
        label_product: sample_i.1 * sample_j.1,
    })
}

/// `K_mu(x, x2) = <mu, z(x, x2)>`.
pub fn combined_kernel(mu: &[f64], kernels: &[BaseKernel], x: &[f64], x2: &[f64]) -> Result<f64> {
    check_len(kernels.len(), mu.len())?;
    let mut acc = 0.0;
    for (m, k) in mu.iter().zip(kernels) {
        acc += m * k.eval(x, x2)?;
    }
    Ok(acc)
}

pub fn gram_matrix<P: AsRef<[f64]>>(
    mu: &[f64],
    kernels: &[BaseKernel],
    points: &[P],
) -> Result<DMatrix<f64>> {
    check_len(kernels.len(), mu.len())?;
    let n = points.len();
    if n == 0 {
        return Err(Error::EmptyData);
    }
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = combined_kernel(mu, kernels, points[i].as_ref(), points[j].as_ref())?;
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    Ok(g)
}
