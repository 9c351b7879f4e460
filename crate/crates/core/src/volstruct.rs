//! Factor loadings σ(T), drift μ(T) and cumulative loadings ρ(T) on the
//! fine grid, plus the coarse tenor-bucket matrix used for calibration.
//!
//! Grid index `u` stands for maturity `u·dt`. With a horizon of `N` steps,
//! `sigma` and `mu` have `N` entries (maturities `0..N-1`, the forwards that
//! exist) and `rho` has `N+1` entries with
//!
//! ```text
//! ρ(0) = 0,   ρ(k) = dt · Σ_{u<k} σ(u)
//! ```
//!
//! so that `ρ(k+1) − ρ(k) = dt·σ(k)` and the log price of a bond maturing at
//! `k` loads on the state through `ρ(k) − ρ(t)`.
//!
//! Coarse buckets are left-closed: row `i` holds the value on
//! `[T_i, T_{i+1})`, the first row also covers `[0, T_1)` and the last row
//! extends to infinity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{check_dt, to_steps};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolatilityTermStructure {
    dt: f64,
    horizon: usize,
    sigma: Vec<Vec<f64>>,
    mu: Vec<f64>,
    rho: Vec<Vec<f64>>,
}

fn prefix_rho(dt: f64, sigma: &[Vec<f64>], n: usize) -> Vec<Vec<f64>> {
    let mut rho = Vec::with_capacity(sigma.len() + 1);
    let mut acc = vec![0.0; n];
    rho.push(acc.clone());
    for s in sigma {
        for (a, x) in acc.iter_mut().zip(s) {
            *a += dt * x;
        }
        rho.push(acc.clone());
    }
    rho
}

impl VolatilityTermStructure {
    /// Loadings on the grid with zero drift. `sigma[u]` is σ at maturity `u·dt`.
    pub fn new(dt: f64, sigma: Vec<Vec<f64>>) -> Result<Self> {
        let mu = vec![0.0; sigma.len()];
        Self::with_mu(dt, sigma, mu)
    }

    pub fn with_mu(dt: f64, sigma: Vec<Vec<f64>>, mu: Vec<f64>) -> Result<Self> {
        check_dt(dt)?;
        let horizon = sigma.len();
        if horizon == 0 {
            return Err(Error::invalid("volatility structure needs at least one grid maturity"));
        }
        let n = sigma[0].len();
        if n == 0 || sigma.iter().any(|s| s.len() != n) {
            return Err(Error::invalid("every σ(T) must have the same positive dimension"));
        }
        if mu.len() != horizon {
            return Err(Error::invalid(format!("drift has {} entries, expected {horizon}", mu.len())));
        }
        if sigma.iter().flatten().chain(&mu).any(|x| !x.is_finite()) {
            return Err(Error::invalid("volatility structure has non-finite entries"));
        }
        let rho = prefix_rho(dt, &sigma, n);
        Ok(Self { dt, horizon, sigma, mu, rho })
    }

    /// Constant loading vector on every maturity.
    pub fn constant(dt: f64, horizon: usize, sigma: Vec<f64>) -> Result<Self> {
        Self::new(dt, vec![sigma; horizon])
    }

    /// Builds the grid structure from a cumulative-loading function with
    /// `ρ(0) = 0`, taking `σ(u) = (ρ(u+dt) − ρ(u))/dt`. The stored ρ then
    /// matches the function at every grid point up to rounding.
    pub fn from_rho_fn(dt: f64, horizon: usize, rho: impl Fn(f64) -> Vec<f64>) -> Result<Self> {
        let pts: Vec<Vec<f64>> = (0..=horizon).map(|k| rho(k as f64 * dt)).collect();
        if pts[0].iter().any(|x| x.abs() > 1e-15) {
            return Err(Error::invalid("cumulative loading must vanish at maturity 0"));
        }
        let sigma = pts
            .windows(2)
            .map(|w| w[1].iter().zip(&w[0]).map(|(b, a)| (b - a) / dt).collect())
            .collect();
        Self::new(dt, sigma)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Number of grid maturities carrying a forward rate.
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn n(&self) -> usize {
        self.sigma[0].len()
    }

    pub fn sigma(&self) -> &[Vec<f64>] {
        &self.sigma
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    /// ρ at grid indices `0..=horizon`.
    pub fn rho(&self) -> &[Vec<f64>] {
        &self.rho
    }

    pub fn rho_at(&self, k: usize) -> &[f64] {
        &self.rho[k]
    }

    /// Replaces the drift, keeping loadings.
    pub fn with_drift(&self, mu: Vec<f64>) -> Result<Self> {
        Self::with_mu(self.dt, self.sigma.clone(), mu)
    }

    /// ρ at maturity `t` (years).
    pub fn cumulative_rho(&self, t: f64) -> Result<Vec<f64>> {
        let k = to_steps(t, self.dt, "T")?;
        if k > self.horizon {
            return Err(Error::OutOfRange(format!("T = {t} beyond horizon {}", self.horizon as f64 * self.dt)));
        }
        Ok(self.rho[k].clone())
    }

    /// Cumulative drift `ρ⁰(k) = dt · Σ_{u<k} μ(u)`.
    pub fn rho0_at(&self, k: usize) -> f64 {
        self.dt * self.mu[..k].iter().sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoarseVolMatrix {
    tenors: Vec<f64>,
    mu: Vec<f64>,
    sigma: Vec<Vec<f64>>,
}

impl CoarseVolMatrix {
    /// `tenors` has `k ≥ 2` entries; `mu` and each row of `sigma` belong to
    /// the `k−1` buckets.
    pub fn new(tenors: Vec<f64>, mu: Vec<f64>, sigma: Vec<Vec<f64>>) -> Result<Self> {
        if tenors.len() < 2 {
            return Err(Error::invalid("coarse matrix needs at least two tenors"));
        }
        if tenors.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::invalid("tenors must be finite and nonnegative"));
        }
        if tenors.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("tenors must be strictly increasing"));
        }
        let rows = tenors.len() - 1;
        if mu.len() != rows || sigma.len() != rows {
            return Err(Error::invalid(format!("expected {rows} bucket rows for {} tenors", tenors.len())));
        }
        let n = sigma[0].len();
        if n == 0 || sigma.iter().any(|r| r.len() != n) {
            return Err(Error::invalid("every bucket row needs the same positive number of loadings"));
        }
        if sigma.iter().flatten().chain(&mu).any(|x| !x.is_finite()) {
            return Err(Error::invalid("coarse matrix has non-finite entries"));
        }
        Ok(Self { tenors, mu, sigma })
    }

    pub fn tenors(&self) -> &[f64] {
        &self.tenors
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn sigma(&self) -> &[Vec<f64>] {
        &self.sigma
    }

    pub fn n(&self) -> usize {
        self.sigma[0].len()
    }

    pub fn buckets(&self) -> usize {
        self.mu.len()
    }

    fn tenor_steps(&self, dt: f64) -> Result<Vec<usize>> {
        self.tenors.iter().map(|&t| to_steps(t, dt, "tenor")).collect()
    }
}

/// Spreads bucket values over the fine grid, piecewise constant.
pub fn interpolate(c: &CoarseVolMatrix, dt: f64, horizon: usize) -> Result<VolatilityTermStructure> {
    check_dt(dt)?;
    let steps = c.tenor_steps(dt)?;
    let interior = &steps[1..steps.len() - 1];
    let mut sigma = Vec::with_capacity(horizon);
    let mut mu = Vec::with_capacity(horizon);
    for u in 0..horizon {
        let row = interior.iter().take_while(|&&k| k <= u).count();
        sigma.push(c.sigma[row].clone());
        mu.push(c.mu[row]);
    }
    VolatilityTermStructure::with_mu(dt, sigma, mu)
}

/// Bucket averages `(ρ(T_{i+1}) − ρ(T_i)) / (T_{i+1} − T_i)`, with the
/// cumulative drift in place of ρ for the drift column.
pub fn coarsen(v: &VolatilityTermStructure, tenors: &[f64]) -> Result<CoarseVolMatrix> {
    if tenors.len() < 2 {
        return Err(Error::invalid("coarse matrix needs at least two tenors"));
    }
    let steps: Vec<usize> = tenors.iter().map(|&t| to_steps(t, v.dt, "tenor")).collect::<Result<_>>()?;
    if let Some(&k) = steps.iter().find(|&&k| k > v.horizon) {
        return Err(Error::OutOfRange(format!("tenor {} beyond horizon {}", k as f64 * v.dt, v.horizon as f64 * v.dt)));
    }
    if steps.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("tenors must be strictly increasing"));
    }
    let mut mu = Vec::with_capacity(steps.len() - 1);
    let mut sigma = Vec::with_capacity(steps.len() - 1);
    for w in steps.windows(2) {
        let (a, b) = (w[0], w[1]);
        let len = (b - a) as f64 * v.dt;
        mu.push((v.rho0_at(b) - v.rho0_at(a)) / len);
        sigma.push(v.rho[b].iter().zip(&v.rho[a]).map(|(y, x)| (y - x) / len).collect());
    }
    let tenors = steps.iter().map(|&k| k as f64 * v.dt).collect();
    CoarseVolMatrix::new(tenors, mu, sigma)
}
