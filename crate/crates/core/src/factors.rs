//! The (n+1)-valued factor increment Δw driving every curve move.
//!
//! A factor distribution is a finite random vector in R^n taking exactly
//! n+1 values with mean zero and covariance `dt·I`. Together with the
//! constant function, the scaled coordinates `Δw^i/√dt` form an orthonormal
//! basis of functions on the outcome set, which is what makes the lattice
//! complete and the discrete Itô expansion exact.
//!
//! Distributions are built from an orthogonal matrix with a strictly positive
//! first row: the first row carries the square roots of the probabilities and
//! the remaining rows carry the scaled outcome values.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::check_dt;

/// Largest factor count the engine accepts (level sizes grow as C(t+n, n)).
pub const MAX_FACTORS: usize = 6;

/// Tolerance on `M·Mᵀ = I` for user-supplied matrices.
pub const ORTHOGONALITY_TOL: f64 = 1e-10;

/// Tolerance on derived moments.
pub const MOMENT_TOL: f64 = 1e-12;

/// A validated orthogonal matrix whose first row is strictly positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrthogonalSpec {
    m: Vec<Vec<f64>>,
}

impl OrthogonalSpec {
    pub fn new(m: Vec<Vec<f64>>) -> Result<Self> {
        let size = m.len();
        if size < 2 {
            return Err(Error::invalid("orthogonal matrix must be at least 2×2"));
        }
        if m.iter().any(|row| row.len() != size) {
            return Err(Error::invalid("orthogonal matrix must be square"));
        }
        if m.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::invalid("orthogonal matrix has non-finite entries"));
        }
        if let Some((column, &value)) = m[0].iter().enumerate().find(|(_, v)| **v <= 0.0) {
            return Err(Error::NonPositiveFirstRow { column, value });
        }
        let max_deviation = orthogonality_defect(&m);
        if max_deviation > ORTHOGONALITY_TOL {
            return Err(Error::NonOrthogonal { max_deviation, tolerance: ORTHOGONALITY_TOL });
        }
        Ok(Self { m })
    }

    /// Parses a plain-text matrix: one row per line, whitespace-separated reals.
    /// Blank lines and lines starting with `#` are skipped.
    pub fn from_text(text: &str, path: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let row = line
                .split_whitespace()
                .map(|tok| {
                    tok.parse::<f64>().map_err(|_| Error::Parse {
                        path: path.to_string(),
                        line: i as u64 + 1,
                        message: format!("cannot parse `{tok}` as a real number"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Self::new(rows)
    }

    /// Helmert-type matrix of size n+1: equal probabilities, nested contrasts.
    pub fn helmert(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("factor count must be positive"));
        }
        let size = n + 1;
        let mut m = vec![vec![0.0; size]; size];
        m[0] = vec![1.0 / (size as f64).sqrt(); size];
        for i in 1..size {
            let norm = ((i * (i + 1)) as f64).sqrt();
            for entry in m[i].iter_mut().take(i) {
                *entry = 1.0 / norm;
            }
            m[i][i] = -(i as f64) / norm;
        }
        Self::new(m)
    }

    pub fn size(&self) -> usize {
        self.m.len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.m
    }
}

fn orthogonality_defect(m: &[Vec<f64>]) -> f64 {
    let size = m.len();
    let mut worst: f64 = 0.0;
    for i in 0..size {
        for j in 0..size {
            let dot: f64 = m[i].iter().zip(&m[j]).map(|(a, b)| a * b).sum();
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((dot - target).abs());
        }
    }
    worst
}

/// The one-step factor increment: n+1 outcomes in R^n with probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorDistribution {
    n: usize,
    dt: f64,
    outcomes: Vec<Vec<f64>>,
    probs: Vec<f64>,
}

impl FactorDistribution {
    /// Builds Δw from an orthogonal matrix: `p_j = m_{0j}²` and
    /// `Δw^i(j) = √dt · m_{ij} / m_{0j}`. Outcomes follow column order.
    pub fn from_orthogonal_matrix(spec: &OrthogonalSpec, dt: f64) -> Result<Self> {
        check_dt(dt)?;
        let size = spec.size();
        let n = size - 1;
        if n > MAX_FACTORS {
            return Err(Error::invalid(format!("n = {n} exceeds the engine bound of {MAX_FACTORS} factors")));
        }
        let m = spec.rows();
        let sqrt_dt = dt.sqrt();
        let probs: Vec<f64> = (0..size).map(|j| m[0][j] * m[0][j]).collect();
        let outcomes = (0..size)
            .map(|j| (1..size).map(|i| sqrt_dt * m[i][j] / m[0][j]).collect())
            .collect();
        let f = Self { n, dt, outcomes, probs };
        let report = f.validate_moments();
        if !report.is_valid(MOMENT_TOL) {
            return Err(Error::invalid(format!("derived factor violates moment conditions: {report:?}")));
        }
        Ok(f)
    }

    /// Classical binary increment: outcome 0 is `−√dt`, outcome 1 is `+√dt`,
    /// each with probability 1/2. The up-move count of a node is its Ho-Lee
    /// state index `i`.
    pub fn binary_ho_lee(dt: f64) -> Result<Self> {
        check_dt(dt)?;
        let s = dt.sqrt();
        Ok(Self { n: 1, dt, outcomes: vec![vec![-s], vec![s]], probs: vec![0.5, 0.5] })
    }

    /// Equal-probability distribution from the Helmert matrix of size n+1.
    pub fn equal_weight(n: usize, dt: f64) -> Result<Self> {
        Self::from_orthogonal_matrix(&OrthogonalSpec::helmert(n)?, dt)
    }

    /// Assembles a distribution from raw parts, checking only shapes and
    /// positivity. Moment conditions are not enforced; see
    /// [`FactorDistribution::validate_moments`].
    pub fn from_parts(dt: f64, outcomes: Vec<Vec<f64>>, probs: Vec<f64>) -> Result<Self> {
        check_dt(dt)?;
        let size = outcomes.len();
        if size < 2 || probs.len() != size {
            return Err(Error::invalid("need n+1 ≥ 2 outcomes and one probability per outcome"));
        }
        let n = size - 1;
        if n > MAX_FACTORS {
            return Err(Error::invalid(format!("n = {n} exceeds the engine bound of {MAX_FACTORS} factors")));
        }
        if outcomes.iter().any(|o| o.len() != n || o.iter().any(|x| !x.is_finite())) {
            return Err(Error::invalid("every outcome must be a finite point in R^n"));
        }
        if probs.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(Error::invalid("probabilities must be strictly positive"));
        }
        Ok(Self { n, dt, outcomes, probs })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Number of outcomes, `n + 1`.
    pub fn size(&self) -> usize {
        self.n + 1
    }

    pub fn outcomes(&self) -> &[Vec<f64>] {
        &self.outcomes
    }

    pub fn outcome(&self, s: usize) -> &[f64] {
        &self.outcomes[s]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Recovers the orthogonal matrix `m_{0j} = √p_j`, `m_{ij} = Δw^i(j)·√p_j/√dt`.
    pub fn to_orthogonal_matrix(&self) -> Vec<Vec<f64>> {
        let size = self.size();
        let sqrt_dt = self.dt.sqrt();
        let mut m = vec![vec![0.0; size]; size];
        for j in 0..size {
            let root = self.probs[j].sqrt();
            m[0][j] = root;
            for i in 1..size {
                m[i][j] = self.outcomes[j][i - 1] * root / sqrt_dt;
            }
        }
        m
    }

    /// Worst-case deviations from each distribution invariant.
    pub fn validate_moments(&self) -> MomentReport {
        let size = self.size();
        let n = self.n;
        let prob_sum_deviation = (self.probs.iter().sum::<f64>() - 1.0).abs();
        let min_prob = self.probs.iter().cloned().fold(f64::INFINITY, f64::min);

        let mut mean_deviation: f64 = 0.0;
        for i in 0..n {
            let mean: f64 = (0..size).map(|s| self.probs[s] * self.outcomes[s][i]).sum();
            mean_deviation = mean_deviation.max(mean.abs());
        }
        let mut covariance_deviation: f64 = 0.0;
        for i in 0..n {
            for k in 0..n {
                let second: f64 =
                    (0..size).map(|s| self.probs[s] * self.outcomes[s][i] * self.outcomes[s][k]).sum();
                let mean_i: f64 = (0..size).map(|s| self.probs[s] * self.outcomes[s][i]).sum();
                let mean_k: f64 = (0..size).map(|s| self.probs[s] * self.outcomes[s][k]).sum();
                let target = if i == k { self.dt } else { 0.0 };
                covariance_deviation = covariance_deviation.max((second - mean_i * mean_k - target).abs());
            }
        }

        let diffs = DMatrix::from_fn(n, n, |r, c| self.outcomes[c + 1][r] - self.outcomes[0][r]);
        let span_rank = diffs.rank(1e-12 * self.dt.sqrt());

        let mut min_separation = f64::INFINITY;
        for a in 0..size {
            for b in (a + 1)..size {
                let d: f64 = self.outcomes[a]
                    .iter()
                    .zip(&self.outcomes[b])
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt();
                min_separation = min_separation.min(d);
            }
        }

        MomentReport {
            prob_sum_deviation,
            min_prob,
            mean_deviation,
            covariance_deviation,
            span_rank,
            n,
            min_separation,
        }
    }
}

/// Per-invariant worst-case deviations of a factor distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub prob_sum_deviation: f64,
    pub min_prob: f64,
    pub mean_deviation: f64,
    pub covariance_deviation: f64,
    /// Rank of the differences `Δw(j) − Δw(0)`; must equal `n`.
    pub span_rank: usize,
    pub n: usize,
    /// Smallest Euclidean distance between two outcomes.
    pub min_separation: f64,
}

impl MomentReport {
    pub fn is_valid(&self, tol: f64) -> bool {
        self.prob_sum_deviation <= tol
            && self.min_prob > 0.0
            && self.mean_deviation <= tol
            && self.covariance_deviation <= tol
            && self.span_rank == self.n
            && self.min_separation > 0.0
    }
}
