//! Gaussian continuous-time limit of the stationary lattice model.
//!
//! With a cumulative loading ρ(T) and an n-dimensional Brownian state W, the
//! coarse forward over `[T, T′)` is
//!
//! ```text
//! F_t(T, T′) = F_0(T, T′) + ⟨(ρ(T′) − ρ(T))/(T′ − T), W_t − W_0⟩ + c(T, T′)·t
//! c(T, T′)   = (|ρ(T′)|² − |ρ(T)|²) / (2(T′ − T))
//! ```
//!
//! `c` is the small-step limit of the lattice bucket drift, since
//! `log E exp⟨x, Δw⟩ = ½|x|²dt + O(dt²)`. Integrating the instantaneous
//! drift `ρ̇ρ` over the bucket gives the same coefficient.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::drift::coarse_drift;
use crate::error::{Error, Result};
use crate::factors::FactorDistribution;
use crate::grid::to_steps;
use crate::volstruct::{CoarseVolMatrix, VolatilityTermStructure};

/// Continuous cumulative loading `T ↦ ρ(T) ∈ Rⁿ` with `ρ(0) = 0`.
pub trait CumulativeVol: Sync {
    fn n(&self) -> usize;
    fn rho(&self, t: f64) -> Vec<f64>;
}

impl<T: CumulativeVol + ?Sized> CumulativeVol for &T {
    fn n(&self) -> usize {
        (**self).n()
    }

    fn rho(&self, t: f64) -> Vec<f64> {
        (**self).rho(t)
    }
}

/// Wraps a closure as a cumulative loading.
pub struct FnRho<F> {
    n: usize,
    f: F,
}

impl<F: Fn(f64) -> Vec<f64> + Sync> FnRho<F> {
    pub fn new(n: usize, f: F) -> Result<Self> {
        let r0 = f(0.0);
        if r0.len() != n || r0.iter().any(|x| x.abs() > 1e-15) {
            return Err(Error::invalid("cumulative loading must have n entries and vanish at 0"));
        }
        Ok(Self { n, f })
    }
}

impl<F: Fn(f64) -> Vec<f64> + Sync> CumulativeVol for FnRho<F> {
    fn n(&self) -> usize {
        self.n
    }

    fn rho(&self, t: f64) -> Vec<f64> {
        (self.f)(t)
    }
}

/// Piecewise-linear ρ through `(knots[i], values[i])`, extended linearly past
/// the last knot with the last slope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseLinearRho {
    knots: Vec<f64>,
    values: Vec<Vec<f64>>,
}

impl PiecewiseLinearRho {
    pub fn new(knots: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        if knots.len() < 2 || knots.len() != values.len() {
            return Err(Error::invalid("need at least two knots with one value each"));
        }
        if knots[0] != 0.0 || values[0].iter().any(|x| *x != 0.0) {
            return Err(Error::invalid("ρ must start at 0 with value 0"));
        }
        if knots.windows(2).any(|w| !(w[1] > w[0])) || knots.iter().any(|k| !k.is_finite()) {
            return Err(Error::invalid("knots must be finite and strictly increasing"));
        }
        let n = values[0].len();
        if n == 0 || values.iter().any(|v| v.len() != n || v.iter().any(|x| !x.is_finite())) {
            return Err(Error::invalid("knot values must be finite vectors of equal length"));
        }
        Ok(Self { knots, values })
    }

    /// Integrates the bucket loadings of a coarse matrix; the first bucket
    /// starts at maturity 0.
    pub fn from_coarse(c: &CoarseVolMatrix) -> Result<Self> {
        let mut knots = vec![0.0];
        let mut values = vec![vec![0.0; c.n()]];
        for (i, s) in c.sigma().iter().enumerate() {
            let left = if i == 0 { 0.0 } else { c.tenors()[i] };
            let right = c.tenors()[i + 1];
            let prev = values.last().unwrap().clone();
            knots.push(right);
            values.push(prev.iter().zip(s).map(|(r, x)| r + (right - left) * x).collect());
        }
        Self::new(knots, values)
    }

    /// Right derivative `ρ̇(t)`.
    pub fn slope(&self, t: f64) -> Vec<f64> {
        let i = self.segment(t);
        let h = self.knots[i + 1] - self.knots[i];
        self.values[i + 1].iter().zip(&self.values[i]).map(|(b, a)| (b - a) / h).collect()
    }

    fn segment(&self, t: f64) -> usize {
        let last = self.knots.len() - 2;
        self.knots[1..].partition_point(|k| *k <= t).min(last)
    }
}

impl CumulativeVol for PiecewiseLinearRho {
    fn n(&self) -> usize {
        self.values[0].len()
    }

    fn rho(&self, t: f64) -> Vec<f64> {
        let i = self.segment(t);
        let (a, b) = (self.knots[i], self.knots[i + 1]);
        let u = (t - a) / (b - a);
        self.values[i].iter().zip(&self.values[i + 1]).map(|(x, y)| x + u * (y - x)).collect()
    }
}

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn check_bucket(t1: f64, t2: f64) -> Result<()> {
    if !(t1.is_finite() && t2.is_finite() && t2 > t1) {
        return Err(Error::invalid(format!("bucket [{t1}, {t2}) must have T′ > T")));
    }
    Ok(())
}

/// Small-step limit of the bucket drift over `[T, T′)`.
pub fn limit_drift<R: CumulativeVol + ?Sized>(rho: &R, t1: f64, t2: f64) -> Result<f64> {
    check_bucket(t1, t2)?;
    Ok((norm2(&rho.rho(t2)) - norm2(&rho.rho(t1))) / (2.0 * (t2 - t1)))
}

/// The three bucket-drift coefficients one can write down for the limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftCoefficients {
    /// `(|ρ(T′)|² − |ρ(T)|²)/(2(T′−T))`, used by the engine.
    pub limit: f64,
    /// `(|ρ(T′)|² − |ρ(T)|²)/(T′−T)`, twice the limit.
    pub unhalved: f64,
    /// `(|ρ(T)|² − |ρ(T′)|²)/(2(T′−T))`, the limit with its sign flipped.
    pub reversed: f64,
}

pub fn drift_coefficients<R: CumulativeVol + ?Sized>(rho: &R, t1: f64, t2: f64) -> Result<DriftCoefficients> {
    let limit = limit_drift(rho, t1, t2)?;
    Ok(DriftCoefficients { limit, unhalved: 2.0 * limit, reversed: -limit })
}

pub struct GaussianIkrsModel<R> {
    rho: R,
    tenors: Vec<f64>,
    initial: Vec<f64>,
}

impl<R: CumulativeVol> GaussianIkrsModel<R> {
    /// `initial[i]` is the time-0 forward over `[tenors[i], tenors[i+1])`.
    pub fn new(rho: R, tenors: Vec<f64>, initial: Vec<f64>) -> Result<Self> {
        if tenors.len() < 2 || initial.len() != tenors.len() - 1 {
            return Err(Error::invalid("need k ≥ 2 tenors and k−1 initial coarse forwards"));
        }
        if tenors.windows(2).any(|w| !(w[1] > w[0])) || tenors[0] < 0.0 {
            return Err(Error::invalid("tenors must be nonnegative and strictly increasing"));
        }
        if initial.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("initial forwards must be finite"));
        }
        Ok(Self { rho, tenors, initial })
    }

    pub fn rho(&self) -> &R {
        &self.rho
    }

    pub fn tenors(&self) -> &[f64] {
        &self.tenors
    }

    /// Time-0 average forward over `[T, T′)` from the piecewise-constant
    /// bucket forwards.
    pub fn initial_forward(&self, t1: f64, t2: f64) -> Result<f64> {
        check_bucket(t1, t2)?;
        let (lo, hi) = (self.tenors[0], *self.tenors.last().unwrap());
        if t1 < lo || t2 > hi {
            return Err(Error::OutOfRange(format!("bucket [{t1}, {t2}) outside [{lo}, {hi}]")));
        }
        let mut acc = 0.0;
        for (i, f) in self.initial.iter().enumerate() {
            let a = self.tenors[i].max(t1);
            let b = self.tenors[i + 1].min(t2);
            if b > a {
                acc += f * (b - a);
            }
        }
        Ok(acc / (t2 - t1))
    }

    fn check_times(&self, t: f64, t1: f64, t2: f64) -> Result<()> {
        check_bucket(t1, t2)?;
        if !(t >= 0.0 && t < t1) {
            return Err(Error::invalid(format!("observation time {t} must satisfy 0 ≤ t < T = {t1}")));
        }
        Ok(())
    }

    /// `F_t(T, T′)` given the Brownian increment `W_t − W_0`.
    pub fn coarse_forward(&self, t: f64, t1: f64, t2: f64, w: &[f64]) -> Result<f64> {
        self.check_times(t, t1, t2)?;
        if w.len() != self.rho.n() {
            return Err(Error::invalid(format!("Brownian state has {} entries, expected {}", w.len(), self.rho.n())));
        }
        let (a, b) = (self.rho.rho(t1), self.rho.rho(t2));
        let h = t2 - t1;
        let noise: f64 = b.iter().zip(&a).zip(w).map(|((y, x), z)| (y - x) / h * z).sum();
        Ok(self.initial_forward(t1, t2)? + noise + limit_drift(&self.rho, t1, t2)? * t)
    }

    /// Mean and variance of `F_t(T, T′)` under `W_t − W_0 ~ N(0, t·I)`.
    pub fn moments(&self, t: f64, t1: f64, t2: f64) -> Result<(f64, f64)> {
        self.check_times(t, t1, t2)?;
        let (a, b) = (self.rho.rho(t1), self.rho.rho(t2));
        let h = t2 - t1;
        let d: Vec<f64> = b.iter().zip(&a).map(|(y, x)| y - x).collect();
        Ok((self.initial_forward(t1, t2)? + limit_drift(&self.rho, t1, t2)? * t, t * norm2(&d) / (h * h)))
    }
}

/// Lattice grid structure matching a continuous ρ at every grid point.
pub fn discretize<R: CumulativeVol + ?Sized>(rho: &R, dt: f64, horizon: usize) -> Result<VolatilityTermStructure> {
    VolatilityTermStructure::from_rho_fn(dt, horizon, |t| rho.rho(t))
}

/// Exact mean shift and variance of the lattice coarse forward over
/// `[T, T′)` after `t` years, relative to its initial value.
pub fn discrete_moments(v: &VolatilityTermStructure, f: &FactorDistribution, t: f64, t1: f64, t2: f64) -> Result<(f64, f64)> {
    let steps = to_steps(t, v.dt(), "t")?;
    let a = to_steps(t1, v.dt(), "T")?;
    let b = to_steps(t2, v.dt(), "T′")?;
    let drift = coarse_drift(v, f, t1, t2)?;
    let h = (b - a) as f64 * v.dt();
    let c: Vec<f64> = v.rho_at(b).iter().zip(v.rho_at(a)).map(|(y, x)| (y - x) / h).collect();
    let proj: Vec<f64> = f.outcomes().iter().map(|o| o.iter().zip(&c).map(|(x, y)| x * y).sum()).collect();
    let m1: f64 = f.probs().iter().zip(&proj).map(|(p, x)| p * x).sum();
    let m2: f64 = f.probs().iter().zip(&proj).map(|(p, x)| p * x * x).sum();
    Ok((t * drift + steps as f64 * m1, steps as f64 * (m2 - m1 * m1)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub dt: f64,
    pub drift_err: f64,
    pub mean_err: f64,
    pub var_err: f64,
}

/// Errors of the lattice bucket drift and coarse-forward moments against the
/// Gaussian limit for `dt0, dt0/2, …` (`levels` entries).
pub fn convergence_test<R, F>(rho: &R, family: F, t1: f64, t2: f64, t: f64, dt0: f64, levels: usize) -> Result<Vec<ConvergenceRow>>
where
    R: CumulativeVol + ?Sized,
    F: Fn(f64) -> Result<FactorDistribution> + Sync,
{
    if levels < 2 {
        return Err(Error::invalid("convergence test needs at least two dt levels"));
    }
    check_bucket(t1, t2)?;
    let limit = limit_drift(rho, t1, t2)?;
    let h = t2 - t1;
    let d: Vec<f64> = rho.rho(t2).iter().zip(rho.rho(t1)).map(|(y, x)| y - x).collect();
    let gauss_var = t * norm2(&d) / (h * h);
    (0..levels)
        .into_par_iter()
        .map(|j| {
            let dt = dt0 / f64::powi(2.0, j as i32);
            let f = family(dt)?;
            if f.n() != rho.n() {
                return Err(Error::invalid(format!("factor family has {} factors, ρ has {}", f.n(), rho.n())));
            }
            let horizon = to_steps(t2, dt, "T′")?;
            let v = discretize(rho, dt, horizon)?;
            let drift = coarse_drift(&v, &f, t1, t2)?;
            let (mean, var) = discrete_moments(&v, &f, t, t1, t2)?;
            Ok(ConvergenceRow {
                dt,
                drift_err: (drift - limit).abs(),
                mean_err: (mean - limit * t).abs(),
                var_err: (var - gauss_var).abs(),
            })
        })
        .collect()
}
