//! Forward curves, bond prices and spot rates at lattice nodes.
//!
//! At a node at step `t` with state `w` the forward for grid maturity `k ≥ t`
//! is
//!
//! ```text
//! F_t(k) = F_0(k) + ⟨σ(k), w⟩ + A(t, k)
//! ```
//!
//! where the accumulated drift `A` is `dt·t·μ(k)` for stationary dynamics
//! and `dt·Σ_{v=1..t} μ(k−v)` for the classical dynamics that are stationary
//! in time to maturity. Bond prices follow from
//! `P_t(T) = exp(−dt · Σ_{u=t}^{T−1} F_t(u))`.

use serde::{Deserialize, Serialize};

use crate::drift;
use crate::error::{Error, Result};
use crate::factors::FactorDistribution;
use crate::grid::{check_dt, to_steps};
use crate::lattice::{Lattice, LatticeNode, DEFAULT_MAX_NODES};
use crate::noarb;
use crate::volstruct::VolatilityTermStructure;

/// Forwards `F_asof(k)` for grid maturities `k = asof..asof+values.len()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardCurve {
    pub asof: usize,
    pub dt: f64,
    pub values: Vec<f64>,
}

impl ForwardCurve {
    pub fn new(asof: usize, dt: f64, values: Vec<f64>) -> Result<Self> {
        check_dt(dt)?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("forward curve has non-finite values"));
        }
        Ok(Self { asof, dt, values })
    }

    pub fn flat(dt: f64, horizon: usize, rate: f64) -> Result<Self> {
        Self::new(0, dt, vec![rate; horizon])
    }

    /// Forward at grid maturity `k`.
    pub fn at(&self, k: usize) -> f64 {
        self.values[k - self.asof]
    }

    /// Discount factors `P(asof + j)` for `j = 0..=len`.
    pub fn bonds(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.values.len() + 1);
        let mut acc = 0.0;
        out.push(1.0);
        for f in &self.values {
            acc -= self.dt * f;
            out.push(acc.exp());
        }
        out
    }
}

/// How the accumulated drift of a forward evolves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Dynamics {
    /// Drift and loadings depend on maturity only; μ lives in the
    /// volatility structure.
    Stationary,
    /// Drift depends on time to maturity; `drift[j]` applies to forwards `j`
    /// steps from maturity. `kernel` is the one-step risk-neutral measure.
    TimeToMaturity { drift: Vec<f64>, kernel: Vec<f64> },
}

#[derive(Debug, Clone)]
pub struct ModelOptions {
    /// Reject models whose martingale error exceeds this value; `None` skips
    /// the check.
    pub martingale_tol: Option<f64>,
    pub max_nodes: usize,
    /// Lattice depth; defaults to the full volatility horizon.
    pub lattice_horizon: Option<usize>,
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self { martingale_tol: Some(1e-10), max_nodes: DEFAULT_MAX_NODES, lattice_horizon: None }
    }
}

#[derive(Debug, Clone)]
pub struct TermStructureModel {
    factor: FactorDistribution,
    vol: VolatilityTermStructure,
    initial: ForwardCurve,
    lattice: Lattice,
    dynamics: Dynamics,
    /// Prefix sums of the time-to-maturity drift.
    ttm_prefix: Vec<f64>,
    martingale_error: Option<f64>,
}

impl TermStructureModel {
    /// Stationary model whose drift is the arbitrage-free one implied by the
    /// loadings in `vol` (any drift already in `vol` is replaced).
    pub fn stationary(
        factor: &FactorDistribution,
        vol: &VolatilityTermStructure,
        initial: ForwardCurve,
        opts: &ModelOptions,
    ) -> Result<Self> {
        let mu = drift::stationary_drift(vol, factor)?;
        Self::assemble(factor, vol.with_drift(mu)?, initial, Dynamics::Stationary, opts)
    }

    pub fn assemble(
        factor: &FactorDistribution,
        vol: VolatilityTermStructure,
        initial: ForwardCurve,
        dynamics: Dynamics,
        opts: &ModelOptions,
    ) -> Result<Self> {
        if vol.n() != factor.n() || (vol.dt() - factor.dt()).abs() > 1e-12 * vol.dt() {
            return Err(Error::invalid("volatility structure and factor distribution disagree on n or dt"));
        }
        if initial.asof != 0 || (initial.dt - vol.dt()).abs() > 1e-12 * vol.dt() {
            return Err(Error::invalid("initial curve must be as of step 0 on the model grid"));
        }
        let horizon = vol.horizon();
        if initial.values.len() != horizon {
            return Err(Error::invalid(format!(
                "initial curve has {} forwards, volatility horizon is {horizon}",
                initial.values.len()
            )));
        }
        let ttm_prefix = match &dynamics {
            Dynamics::Stationary => Vec::new(),
            Dynamics::TimeToMaturity { drift, kernel } => {
                if drift.len() < horizon {
                    return Err(Error::invalid(format!("time-to-maturity drift needs {horizon} entries")));
                }
                if kernel.len() != factor.size()
                    || kernel.iter().any(|p| !(p.is_finite() && *p > 0.0))
                    || (kernel.iter().sum::<f64>() - 1.0).abs() > 1e-12
                {
                    return Err(Error::invalid("kernel must be a strictly positive probability per outcome"));
                }
                let mut s = vec![0.0];
                for m in drift {
                    s.push(s.last().unwrap() + m);
                }
                s
            }
        };
        let depth = opts.lattice_horizon.unwrap_or(horizon);
        if depth > horizon {
            return Err(Error::invalid(format!("lattice depth {depth} exceeds horizon {horizon}")));
        }
        let lattice = Lattice::build_with_budget(factor, depth, opts.max_nodes)?;
        let mut model = Self {
            factor: factor.clone(),
            vol,
            initial,
            lattice,
            dynamics,
            ttm_prefix,
            martingale_error: None,
        };
        if let Some(tol) = opts.martingale_tol {
            let report = noarb::verify_martingale(&model)?;
            if report.max_error > tol {
                return Err(Error::Arbitrage { max_error: report.max_error, tolerance: tol, per_level: report.per_level });
            }
            model.martingale_error = Some(report.max_error);
        }
        Ok(model)
    }

    pub fn factor(&self) -> &FactorDistribution {
        &self.factor
    }

    pub fn vol(&self) -> &VolatilityTermStructure {
        &self.vol
    }

    pub fn initial(&self) -> &ForwardCurve {
        &self.initial
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn dynamics(&self) -> &Dynamics {
        &self.dynamics
    }

    pub fn dt(&self) -> f64 {
        self.vol.dt()
    }

    pub fn horizon(&self) -> usize {
        self.vol.horizon()
    }

    /// Martingale error measured at assembly, if the check ran.
    pub fn martingale_error(&self) -> Option<f64> {
        self.martingale_error
    }

    /// Per-step drift increment `ν_s(k)` added to `F(k)` at step `s ≥ 1`,
    /// divided by dt.
    pub fn drift_increment(&self, s: usize, k: usize) -> f64 {
        match &self.dynamics {
            Dynamics::Stationary => self.vol.mu()[k],
            Dynamics::TimeToMaturity { drift, .. } => drift[k - s],
        }
    }

    /// Accumulated drift `A(t, k)`.
    pub fn drift_accum(&self, t: usize, k: usize) -> f64 {
        let dt = self.dt();
        match &self.dynamics {
            Dynamics::Stationary => dt * t as f64 * self.vol.mu()[k],
            Dynamics::TimeToMaturity { .. } => dt * (self.ttm_prefix[k] - self.ttm_prefix[k - t]),
        }
    }

    /// `F_t(k)` at state `w`, by grid indices. Requires `t ≤ k < horizon`.
    pub fn forward_idx(&self, t: usize, w: &[f64], k: usize) -> f64 {
        let load: f64 = self.vol.sigma()[k].iter().zip(w).map(|(a, b)| a * b).sum();
        self.initial.values[k] + load + self.drift_accum(t, k)
    }

    /// `log P_t(t + j)` for `j = 0..=horizon−t`.
    pub fn log_bond_curve(&self, t: usize, w: &[f64]) -> Vec<f64> {
        let n = self.horizon();
        let dt = self.dt();
        let mut out = Vec::with_capacity(n - t + 1);
        let mut acc = 0.0;
        out.push(0.0);
        for k in t..n {
            acc -= dt * self.forward_idx(t, w, k);
            out.push(acc);
        }
        out
    }

    pub fn log_bond_idx(&self, t: usize, w: &[f64], k: usize) -> f64 {
        let dt = self.dt();
        -(t..k).map(|u| dt * self.forward_idx(t, w, u)).sum::<f64>()
    }

    fn check_node(&self, node: &LatticeNode) -> Result<()> {
        self.lattice.locate(node).map(|_| ())
    }

    fn maturity(&self, node: &LatticeNode, t: f64, last: usize) -> Result<usize> {
        let k = to_steps(t, self.dt(), "T")?;
        if k < node.step || k > last {
            return Err(Error::OutOfRange(format!(
                "maturity {t} outside [{}, {}]",
                node.step as f64 * self.dt(),
                last as f64 * self.dt()
            )));
        }
        Ok(k)
    }

    pub fn forward_at_node(&self, node: &LatticeNode, t: f64) -> Result<f64> {
        self.check_node(node)?;
        let k = self.maturity(node, t, self.horizon() - 1)?;
        Ok(self.forward_idx(node.step, &node.w, k))
    }

    /// The whole forward curve seen from `node`.
    pub fn curve_at_node(&self, node: &LatticeNode) -> Result<ForwardCurve> {
        self.check_node(node)?;
        let values = (node.step..self.horizon()).map(|k| self.forward_idx(node.step, &node.w, k)).collect();
        ForwardCurve::new(node.step, self.dt(), values)
    }

    pub fn bond_price(&self, node: &LatticeNode, t: f64) -> Result<f64> {
        self.check_node(node)?;
        let k = self.maturity(node, t, self.horizon())?;
        Ok(self.log_bond_idx(node.step, &node.w, k).exp())
    }

    pub fn forward_from_bonds(&self, node: &LatticeNode, t: f64) -> Result<f64> {
        let p1 = self.bond_price(node, t)?;
        let p2 = self.bond_price(node, t + self.dt())?;
        Ok((p1 / p2).ln() / self.dt())
    }

    pub fn spot_rate(&self, node: &LatticeNode, t: f64) -> Result<f64> {
        self.check_node(node)?;
        let k = self.maturity(node, t, self.horizon())?;
        if k == node.step {
            return Err(Error::invalid("spot rate undefined at the valuation time"));
        }
        let tau = (k - node.step) as f64 * self.dt();
        Ok(-self.log_bond_idx(node.step, &node.w, k) / tau)
    }

    /// Continuously compounded forward over `(t1, t2]` seen from `node`.
    pub fn coarse_forward(&self, node: &LatticeNode, t1: f64, t2: f64) -> Result<f64> {
        self.check_node(node)?;
        let a = self.maturity(node, t1, self.horizon())?;
        let b = self.maturity(node, t2, self.horizon())?;
        if b <= a {
            return Err(Error::invalid(format!("forward period end {t2} must exceed start {t1}")));
        }
        let la = self.log_bond_idx(node.step, &node.w, a);
        let lb = self.log_bond_idx(node.step, &node.w, b);
        Ok((la - lb) / ((b - a) as f64 * self.dt()))
    }
}

/// Classical Ho-Lee model on the binary factor: constant loading `sigma`,
/// up-move probability `pi` under the risk-neutral measure and the matching
/// time-to-maturity drift.
pub fn classical_model(pi: f64, sigma: f64, dt: f64, initial: ForwardCurve, opts: &ModelOptions) -> Result<TermStructureModel> {
    let f = FactorDistribution::binary_ho_lee(dt)?;
    a3_model(&f, &[1.0 - pi, pi], &[sigma], initial, opts)
}

/// Multi-factor model with constant loading vector and time-to-maturity
/// stationary drift under the one-step measure `pi`.
pub fn a3_model(
    f: &FactorDistribution,
    pi: &[f64],
    sigma: &[f64],
    initial: ForwardCurve,
    opts: &ModelOptions,
) -> Result<TermStructureModel> {
    let horizon = initial.values.len();
    let drift = drift::multi_drift(pi, sigma, f, horizon)?;
    let vol = VolatilityTermStructure::constant(f.dt(), horizon, sigma.to_vec())?;
    TermStructureModel::assemble(f, vol, initial, Dynamics::TimeToMaturity { drift, kernel: pi.to_vec() }, opts)
}

fn closed_form_common(p0: &[f64], mu: &[f64], dt: f64, t: usize, tau: usize) -> Result<(f64, f64)> {
    if t + tau >= p0.len() {
        return Err(Error::OutOfRange(format!("maturity {} beyond the initial curve", t + tau)));
    }
    if tau > 0 && t > 0 && tau + t - 1 > mu.len() {
        return Err(Error::OutOfRange("drift shorter than required".into()));
    }
    let mut s = 0.0;
    for u in 0..tau {
        for v in 1..=t {
            s += mu[u + v - 1];
        }
    }
    Ok(((p0[t + tau] / p0[t]).ln(), dt * dt * s))
}

/// Ho-Lee closed form `P^{(t)}_i(τ)` for `i` up moves after `t` steps, with
/// `τ` in steps to maturity. `p0[k]` is the initial discount factor to `k`.
pub fn ho_lee_closed_form(p0: &[f64], sigma: f64, mu: &[f64], dt: f64, t: usize, i: usize, tau: usize) -> Result<f64> {
    if i > t {
        return Err(Error::OutOfRange(format!("state index {i} exceeds step {t}")));
    }
    let w = dt.sqrt() * (2.0 * i as f64 - t as f64);
    multi_closed_form(p0, &[sigma], mu, dt, t, &[w], tau)
}

/// Multi-factor closed form at state `w` after `t` steps.
pub fn multi_closed_form(p0: &[f64], sigma: &[f64], mu: &[f64], dt: f64, t: usize, w: &[f64], tau: usize) -> Result<f64> {
    if sigma.len() != w.len() {
        return Err(Error::invalid("σ and w must have the same dimension"));
    }
    let (base, drift) = closed_form_common(p0, mu, dt, t, tau)?;
    let load: f64 = sigma.iter().zip(w).map(|(a, b)| a * b).sum();
    Ok((base - tau as f64 * dt * load - drift).exp())
}

/// Ho-Lee perturbation functions `(h, h*)` on `T = 0..count`, with
/// `δ = e^{2σ}`.
pub fn perturbation_functions(pi: f64, sigma: f64, count: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(pi.is_finite() && pi > 0.0 && pi < 1.0) {
        return Err(Error::invalid(format!("π = {pi} must lie in (0, 1)")));
    }
    let mut h = Vec::with_capacity(count);
    let mut hs = Vec::with_capacity(count);
    for t in 0..count {
        let d = (2.0 * sigma * t as f64).exp();
        let den = pi + (1.0 - pi) * d;
        h.push(1.0 / den);
        hs.push(d / den);
    }
    Ok((h, hs))
}
