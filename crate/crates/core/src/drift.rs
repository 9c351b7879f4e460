//! Arbitrage-free drifts.
//!
//! Everything here is built from the one-step log moment generating function
//! `L(x) = log E[exp⟨x, Δw⟩]`, evaluated as an exact sum over the n+1
//! outcomes. For the stationary model with state-price density
//! `D_t = exp(−⟨ρ(t), w_t⟩)` the drift that makes discounted bond prices
//! martingales is
//!
//! ```text
//! μ(T) = ( L(−ρ(T+dt)) − L(−ρ(T)) ) / dt²
//! ```
//!
//! which telescopes along maturities, so bucket drifts only need ρ at the
//! bucket ends.

use crate::error::{Error, Result};
use crate::factors::FactorDistribution;
use crate::grid::to_steps;
use crate::volstruct::VolatilityTermStructure;

/// `log Σ_s p_s exp(y_s)` for `Σ p_s = 1`, stable for both tiny and large `y`.
pub fn log_expectation(probs: &[f64], y: &[f64]) -> f64 {
    let m = y.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    if m < 1.0 {
        let s: f64 = probs.iter().zip(y).map(|(p, v)| p * v.exp_m1()).sum();
        s.ln_1p()
    } else {
        let top = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        top + probs.iter().zip(y).map(|(p, v)| p * (v - top).exp()).sum::<f64>().ln()
    }
}

fn projections(f: &FactorDistribution, x: &[f64]) -> Vec<f64> {
    f.outcomes().iter().map(|o| o.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

/// `log E[exp⟨x, Δw⟩]` under the real-world probabilities.
pub fn log_mgf(f: &FactorDistribution, x: &[f64]) -> f64 {
    log_expectation(f.probs(), &projections(f, x))
}

/// Same as [`log_mgf`] under an arbitrary one-step measure `pi`.
pub fn log_mgf_under(f: &FactorDistribution, pi: &[f64], x: &[f64]) -> f64 {
    log_expectation(pi, &projections(f, x))
}

fn neg(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| -v).collect()
}

fn check_compatible(v: &VolatilityTermStructure, f: &FactorDistribution) -> Result<()> {
    if v.n() != f.n() {
        return Err(Error::invalid(format!("volatility has {} factors, distribution has {}", v.n(), f.n())));
    }
    if (v.dt() - f.dt()).abs() > 1e-12 * v.dt() {
        return Err(Error::invalid(format!("volatility dt {} differs from factor dt {}", v.dt(), f.dt())));
    }
    Ok(())
}

/// Drift on grid maturities `0..horizon` for the stationary model.
pub fn stationary_drift(v: &VolatilityTermStructure, f: &FactorDistribution) -> Result<Vec<f64>> {
    check_compatible(v, f)?;
    let dt2 = v.dt() * v.dt();
    let l: Vec<f64> = v.rho().iter().map(|r| log_mgf(f, &neg(r))).collect();
    Ok(l.windows(2).map(|w| (w[1] - w[0]) / dt2).collect())
}

fn check_pi(pi: f64) -> Result<()> {
    if pi.is_finite() && pi > 0.0 && pi < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("π = {pi} must lie in (0, 1)")))
    }
}

/// Classical Ho-Lee drift for unit steps, where `pi` is the probability of
/// the up move. Returns `μ(0..count)`.
pub fn classical_drift(pi: f64, sigma: f64, count: usize) -> Result<Vec<f64>> {
    check_pi(pi)?;
    let g = |a: f64| log_expectation(&[pi, 1.0 - pi], &[-a, a]);
    Ok((0..count).map(|t| g((t + 1) as f64 * sigma) - g(t as f64 * sigma)).collect())
}

/// Drift of the multi-factor model with time-to-maturity stationary
/// dynamics: constant loading `sigma` and one-step measure `pi`.
///
/// For `dt = 1` this is `log Σπ e^{−(T+1)⟨σ,Δw⟩} − log Σπ e^{−T⟨σ,Δw⟩}`; for
/// other steps the maturity is scaled by `dt` and the result divided by `dt²`
/// so that it enters forwards as `dt · μ`.
pub fn multi_drift(pi: &[f64], sigma: &[f64], f: &FactorDistribution, count: usize) -> Result<Vec<f64>> {
    if pi.len() != f.size() || pi.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
        return Err(Error::invalid("π must be a strictly positive vector with one entry per outcome"));
    }
    if (pi.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
        return Err(Error::invalid("π must sum to one"));
    }
    if sigma.len() != f.n() {
        return Err(Error::invalid(format!("σ has {} entries, expected {}", sigma.len(), f.n())));
    }
    let dt = f.dt();
    let g = |k: usize| log_mgf_under(f, pi, &sigma.iter().map(|s| -(k as f64) * dt * s).collect::<Vec<_>>());
    let l: Vec<f64> = (0..=count).map(g).collect();
    Ok(l.windows(2).map(|w| (w[1] - w[0]) / (dt * dt)).collect())
}

/// Average stationary drift over the bucket `[t1, t2)` (years).
pub fn coarse_drift(v: &VolatilityTermStructure, f: &FactorDistribution, t1: f64, t2: f64) -> Result<f64> {
    check_compatible(v, f)?;
    if t2 <= t1 {
        return Err(Error::invalid(format!("bucket end {t2} must exceed bucket start {t1}")));
    }
    let a = to_steps(t1, v.dt(), "T_i")?;
    let b = to_steps(t2, v.dt(), "T_i+1")?;
    if b > v.horizon() {
        return Err(Error::OutOfRange(format!("T = {t2} beyond horizon")));
    }
    let la = log_mgf(f, &neg(v.rho_at(a)));
    let lb = log_mgf(f, &neg(v.rho_at(b)));
    Ok((lb - la) / ((b - a) as f64 * v.dt() * v.dt()))
}
