//! Principal component calibration of bucket-forward increments.
//!
//! Increments `y_p ∈ R^k` of the k bucket forwards are decomposed as
//! `y = X Λ^{1/2} w + ȳ` with `w` uncorrelated and of unit variance. Since
//! the model's factor increments have variance `dt`, the bucket loadings are
//! `σ_{ij} = x_{j,i} √λ_j / √dt`. Loadings are identified only up to an
//! orthogonal rotation, so comparisons go through implied covariances.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factors::MAX_FACTORS;
use crate::grid::check_dt;
use crate::volstruct::CoarseVolMatrix;

/// Eigenvalues this far below zero (relative to the largest) are rounding.
const CLAMP_TOL: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    tenors: Vec<f64>,
    samples: Vec<Vec<f64>>,
}

impl SampleSet {
    /// `samples[p]` holds the increments of the `tenors.len() − 1` buckets.
    pub fn new(tenors: Vec<f64>, samples: Vec<Vec<f64>>) -> Result<Self> {
        if tenors.len() < 2 || tenors.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("need at least two strictly increasing tenors"));
        }
        let k = tenors.len() - 1;
        if samples.len() < 2 {
            return Err(Error::invalid(format!("need at least 2 samples, got {}", samples.len())));
        }
        if let Some(p) = samples.iter().position(|s| s.len() != k) {
            return Err(Error::invalid(format!("sample {p} has {} entries, expected {k}", samples[p].len())));
        }
        if samples.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::invalid("samples contain non-finite values"));
        }
        Ok(Self { tenors, samples })
    }

    /// Consecutive differences of observed bucket-forward levels.
    pub fn from_levels(tenors: Vec<f64>, levels: &[Vec<f64>]) -> Result<Self> {
        let samples = levels.windows(2).map(|w| w[1].iter().zip(&w[0]).map(|(b, a)| b - a).collect()).collect();
        Self::new(tenors, samples)
    }

    pub fn tenors(&self) -> &[f64] {
        &self.tenors
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    pub fn dim(&self) -> usize {
        self.tenors.len() - 1
    }

    /// Sample mean, accumulated as offsets from the first sample.
    pub fn mean(&self) -> Vec<f64> {
        let n = self.samples.len() as f64;
        let base = &self.samples[0];
        let mut m = vec![0.0; self.dim()];
        for s in &self.samples {
            for ((a, x), b) in m.iter_mut().zip(s).zip(base) {
                *a += x - b;
            }
        }
        m.iter().zip(base).map(|(x, b)| b + x / n).collect()
    }
}

/// Sample covariance with `1/N` normalization.
pub fn covariance(s: &SampleSet) -> DMatrix<f64> {
    let k = s.dim();
    let mean = s.mean();
    let n = s.samples.len() as f64;
    let mut c = DMatrix::zeros(k, k);
    for y in &s.samples {
        for l in 0..k {
            let dl = y[l] - mean[l];
            for m in l..k {
                c[(l, m)] += dl * (y[m] - mean[m]);
            }
        }
    }
    for l in 0..k {
        for m in l..k {
            c[(l, m)] /= n;
            c[(m, l)] = c[(l, m)];
        }
    }
    c
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaResult {
    pub mean: Vec<f64>,
    /// Descending, nonnegative.
    pub eigenvalues: Vec<f64>,
    /// `eigenvectors[j]` is the unit vector `x_j`.
    pub eigenvectors: Vec<Vec<f64>>,
    pub n: usize,
    /// `loadings[i][j] = x_{j,i} √λ_j` for the first `n` components (k × n).
    pub loadings: Vec<Vec<f64>>,
}

impl PcaResult {
    pub fn explained_variance(&self) -> Vec<f64> {
        let total: f64 = self.eigenvalues.iter().sum();
        let mut acc = 0.0;
        self.eigenvalues
            .iter()
            .map(|l| {
                acc += l;
                if total > 0.0 {
                    acc / total
                } else {
                    1.0
                }
            })
            .collect()
    }

    /// `L·Lᵀ` for the retained loadings.
    pub fn implied_covariance(&self) -> DMatrix<f64> {
        let k = self.loadings.len();
        DMatrix::from_fn(k, k, |a, b| self.loadings[a].iter().zip(&self.loadings[b]).map(|(x, y)| x * y).sum())
    }

    fn with_factors(mut self, n: usize) -> Self {
        self.n = n;
        let k = self.eigenvalues.len();
        self.loadings =
            (0..k).map(|i| (0..n).map(|j| self.eigenvectors[j][i] * self.eigenvalues[j].sqrt()).collect()).collect();
        self
    }
}

/// Eigen-decomposition sorted by descending eigenvalue. Each eigenvector is
/// signed so that its largest-magnitude entry is positive (first such entry
/// on ties).
pub fn decompose(c: &DMatrix<f64>) -> Result<PcaResult> {
    let k = c.nrows();
    if k == 0 || c.ncols() != k {
        return Err(Error::invalid("covariance must be a nonempty square matrix"));
    }
    let scale = c.amax().max(f64::MIN_POSITIVE);
    for a in 0..k {
        for b in 0..a {
            if (c[(a, b)] - c[(b, a)]).abs() > 1e-12 * scale {
                return Err(Error::invalid(format!("matrix is not symmetric at ({a}, {b})")));
            }
        }
    }
    let eig = SymmetricEigen::new(c.clone());
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let mut eigenvalues = Vec::with_capacity(k);
    let mut eigenvectors = Vec::with_capacity(k);
    for &j in &order {
        let mut lam = eig.eigenvalues[j];
        if lam < 0.0 {
            if lam < -CLAMP_TOL * top.max(1.0) {
                return Err(Error::invalid(format!("matrix is not positive semidefinite (eigenvalue {lam:.3e})")));
            }
            lam = 0.0;
        }
        let mut v: Vec<f64> = eig.eigenvectors.column(j).iter().cloned().collect();
        let mut lead = 0;
        for (i, x) in v.iter().enumerate() {
            if x.abs() > v[lead].abs() {
                lead = i;
            }
        }
        if v[lead] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        eigenvalues.push(lam);
        eigenvectors.push(v);
    }
    Ok(PcaResult { mean: vec![0.0; k], eigenvalues, eigenvectors, n: k, loadings: Vec::new() }.with_factors(k))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FactorPolicy {
    Fixed(usize),
    /// Smallest n whose cumulative explained variance reaches θ.
    Threshold(f64),
}

pub fn select_factors(r: &PcaResult, policy: FactorPolicy) -> Result<usize> {
    let k = r.eigenvalues.len();
    match policy {
        FactorPolicy::Fixed(n) => {
            if n == 0 || n > k {
                return Err(Error::invalid(format!("factor count {n} must lie in 1..={k}")));
            }
            Ok(n)
        }
        FactorPolicy::Threshold(theta) => {
            if !(theta > 0.0 && theta <= 1.0) {
                return Err(Error::invalid(format!("variance threshold θ = {theta} must lie in (0, 1]")));
            }
            let explained = r.explained_variance();
            let n = explained.iter().position(|e| *e >= theta - 1e-12).map_or(k, |p| p + 1);
            Ok(n.max(1))
        }
    }
}

/// Estimates the coarse volatility matrix from per-step increments.
/// The drift column is the sample mean divided by dt; it is descriptive
/// only and never used for pricing.
pub fn calibrate(s: &SampleSet, dt: f64, policy: FactorPolicy) -> Result<(CoarseVolMatrix, PcaResult)> {
    check_dt(dt)?;
    let mut r = decompose(&covariance(s))?;
    r.mean = s.mean();
    let n = select_factors(&r, policy)?;
    if n > MAX_FACTORS {
        return Err(Error::invalid(format!("{n} factors selected, the engine supports at most {MAX_FACTORS}")));
    }
    let r = r.with_factors(n);
    let root = dt.sqrt();
    let sigma = r.loadings.iter().map(|row| row.iter().map(|x| x / root).collect()).collect();
    let mu = r.mean.iter().map(|m| m / dt).collect();
    let c = CoarseVolMatrix::new(s.tenors.clone(), mu, sigma)?;
    Ok((c, r))
}
