//! No-arbitrage checks: state-price densities, risk-neutral kernels and the
//! one-step martingale condition on bond prices.
//!
//! The stationary model is priced by `D_t = exp(−⟨ρ(t), w_t⟩)`. Anchoring it
//! to the initial curve, `D̃_t = P_0(t)·D_t / E[D_t]`, reproduces every model
//! bond price as `P_t(T) = E[D̃_T | F_t] / D̃_t`. The one-step risk-neutral
//! kernel it induces is `π_t(s) ∝ p_s · exp(−⟨ρ(t+dt), Δw(s)⟩)`, the same at
//! every node of a level.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factors::FactorDistribution;
use crate::grid::to_steps;
use crate::lattice::{Lattice, LatticeNode};
use crate::model::{Dynamics, ForwardCurve, TermStructureModel};
use crate::volstruct::VolatilityTermStructure;

/// Residual and positivity tolerance for the implied one-step measure.
pub const ARBITRAGE_TOL: f64 = 1e-10;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Risk-neutral one-step probabilities used by the model between `step` and
/// `step+1`.
pub fn one_step_kernel(m: &TermStructureModel, step: usize) -> Vec<f64> {
    match m.dynamics() {
        Dynamics::Stationary => canonical_kernel(m.factor(), m.vol().rho_at(step + 1)),
        Dynamics::TimeToMaturity { kernel, .. } => kernel.clone(),
    }
}

/// `π(s) ∝ p_s · exp(−⟨rho, Δw(s)⟩)`.
pub fn canonical_kernel(f: &FactorDistribution, rho: &[f64]) -> Vec<f64> {
    let y: Vec<f64> = f.outcomes().iter().map(|o| -dot(rho, o)).collect();
    let top = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = f.probs().iter().zip(&y).map(|(p, v)| p * (v - top).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|r| r / total).collect()
}

pub fn risk_neutral_probs(m: &TermStructureModel, node: &LatticeNode) -> Result<Vec<f64>> {
    m.lattice().locate(node)?;
    if node.step >= m.lattice().horizon() {
        return Err(Error::OutOfRange(format!("node at step {} has no successor", node.step)));
    }
    Ok(one_step_kernel(m, node.step))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleReport {
    pub max_error: f64,
    /// Worst error among nodes of each step `0..depth`.
    pub per_level: Vec<f64>,
}

fn level_curves(m: &TermStructureModel, t: usize) -> Vec<Vec<f64>> {
    m.lattice().levels()[t].nodes().par_iter().map(|node| m.log_bond_curve(t, &node.w)).collect()
}

/// Worst `|E^π[P_{t+dt}(T)]·P_t(t+dt)/P_t(T) − 1|` over all nodes and
/// maturities, under the model's own kernel.
pub fn verify_martingale(m: &TermStructureModel) -> Result<MartingaleReport> {
    let lat = m.lattice();
    let size = m.factor().size();
    let mut per_level = Vec::with_capacity(lat.horizon());
    if lat.horizon() == 0 {
        return Ok(MartingaleReport { max_error: 0.0, per_level });
    }
    let mut cur = level_curves(m, 0);
    for t in 0..lat.horizon() {
        let next = level_curves(m, t + 1);
        let pi = one_step_kernel(m, t);
        let bad = cur.iter().chain(&next).flatten().any(|x| !x.is_finite());
        if bad {
            return Err(Error::invalid(format!("non-finite bond price encountered at step {t}")));
        }
        let worst = (0..cur.len())
            .into_par_iter()
            .map(|i| {
                let lc = &cur[i];
                let mut worst: f64 = 0.0;
                for j in 1..lc.len() - 1 {
                    // maturity T = t + 1 + j; child curves start at t + 1
                    let mut excess = 0.0;
                    for s in 0..size {
                        let child = &next[lat.child_index(t, i, s)];
                        excess += pi[s] * (child[j] + lc[1] - lc[j + 1]).exp_m1();
                    }
                    worst = worst.max(excess.abs());
                }
                worst
            })
            .reduce(|| 0.0, f64::max);
        per_level.push(worst);
        cur = next;
    }
    let max_error = per_level.iter().cloned().fold(0.0, f64::max);
    Ok(MartingaleReport { max_error, per_level })
}

/// Solves for the one-step measure closest to the real-world one (in the
/// chi-square sense) that makes every bond a martingale at `node`.
/// Fails when no strictly positive solution exists.
pub fn implied_risk_neutral_probs(m: &TermStructureModel, node: &LatticeNode) -> Result<Vec<f64>> {
    let lat = m.lattice();
    let i = lat.locate(node)?;
    let t = node.step;
    if t >= lat.horizon() {
        return Err(Error::OutOfRange(format!("node at step {t} has no successor")));
    }
    let f = m.factor();
    let size = f.size();
    let lc = m.log_bond_curve(t, &node.w);
    let children: Vec<Vec<f64>> = (0..size)
        .map(|s| m.log_bond_curve(t + 1, &lat.levels()[t + 1].nodes()[lat.child_index(t, i, s)].w))
        .collect();
    let mut rows = vec![vec![1.0; size]];
    for j in 1..lc.len() - 1 {
        rows.push((0..size).map(|s| (children[s][j] + lc[1] - lc[j + 1]).exp()).collect());
    }
    let p = f.probs();
    let a = DMatrix::from_fn(rows.len(), size, |r, c| rows[r][c]);
    let scaled = DMatrix::from_fn(rows.len(), size, |r, c| rows[r][c] * p[c].sqrt());
    let pv = DVector::from_column_slice(p);
    let rhs = DVector::from_element(rows.len(), 1.0) - &a * &pv;
    let svd = scaled.svd(true, true);
    let smax = svd.singular_values.max();
    let y = svd
        .solve(&rhs, 1e-13 * smax.max(1.0))
        .map_err(|e| Error::NoRiskNeutralMeasure { step: t, detail: e.to_string() })?;
    let pi: Vec<f64> = (0..size).map(|s| p[s] + p[s].sqrt() * y[s]).collect();
    let resid = (&a * DVector::from_column_slice(&pi)).add_scalar(-1.0).amax();
    if resid > ARBITRAGE_TOL {
        return Err(Error::NoRiskNeutralMeasure {
            step: t,
            detail: format!("martingale system residual {resid:.3e} exceeds {ARBITRAGE_TOL:.1e}"),
        });
    }
    if let Some(s) = pi.iter().position(|x| *x <= 0.0) {
        return Err(Error::NoRiskNeutralMeasure { step: t, detail: format!("π({s}) = {} is not positive", pi[s]) });
    }
    Ok(pi)
}

/// Per-node positive values on each lattice level.
#[derive(Debug, Clone, PartialEq)]
pub struct StatePriceDensity {
    pub values: Vec<Vec<f64>>,
}

impl StatePriceDensity {
    /// Level means under the real-world probabilities.
    pub fn level_means(&self, lat: &Lattice) -> Vec<f64> {
        self.values.iter().zip(lat.levels()).map(|(v, l)| dot(v, l.probs())).collect()
    }

    /// `D̂_t = D_t / E[D_t]`.
    pub fn normalized(&self, lat: &Lattice) -> Self {
        let means = self.level_means(lat);
        let values = self.values.iter().zip(means).map(|(v, e)| v.iter().map(|x| x / e).collect()).collect();
        Self { values }
    }

    /// `P_0(t) · D̂_t`, the density that prices against `initial`.
    pub fn anchored(&self, lat: &Lattice, initial: &ForwardCurve) -> Self {
        let bonds = initial.bonds();
        let mut out = self.normalized(lat);
        for (t, v) in out.values.iter_mut().enumerate() {
            for x in v.iter_mut() {
                *x *= bonds[t];
            }
        }
        out
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { values: self.values.iter().map(|v| v.iter().map(|x| x * c).collect()).collect() }
    }
}

/// `D_t = exp(−⟨ρ(t), w_t⟩)` on every node.
pub fn canonical_spd(v: &VolatilityTermStructure, lat: &Lattice) -> Result<StatePriceDensity> {
    if v.n() != lat.factor().n() {
        return Err(Error::invalid("volatility structure and lattice disagree on n"));
    }
    if lat.horizon() > v.horizon() {
        return Err(Error::invalid("lattice deeper than the volatility horizon"));
    }
    let values = lat
        .levels()
        .iter()
        .enumerate()
        .map(|(t, l)| l.nodes().iter().map(|n| (-dot(v.rho_at(t), &n.w)).exp()).collect())
        .collect();
    Ok(StatePriceDensity { values })
}

/// `E[D_T | F_t]` for every node at steps `0..=T`, by backward induction.
pub fn conditional_spd(spd: &StatePriceDensity, lat: &Lattice, maturity: usize) -> Vec<Vec<f64>> {
    let probs = lat.factor().probs();
    let mut out = vec![Vec::new(); maturity + 1];
    out[maturity] = spd.values[maturity].clone();
    for t in (0..maturity).rev() {
        let next = &out[t + 1];
        let vals = (0..lat.levels()[t].len())
            .map(|i| probs.iter().enumerate().map(|(s, p)| p * next[lat.child_index(t, i, s)]).sum())
            .collect();
        out[t] = vals;
    }
    out
}

/// `E[D_T | F_t] / D_t` at `node`; maturity in years.
pub fn spd_bond_price(spd: &StatePriceDensity, lat: &Lattice, node: &LatticeNode, maturity: f64) -> Result<f64> {
    let i = lat.locate(node)?;
    let k = to_steps(maturity, lat.factor().dt(), "T")?;
    if k > lat.horizon() || k < node.step {
        return Err(Error::OutOfRange(format!("maturity step {k} outside [{}, {}]", node.step, lat.horizon())));
    }
    let cond = conditional_spd(spd, lat, k);
    Ok(cond[node.step][i] / spd.values[node.step][i])
}

/// One-step probabilities implied by a density: `π(s) = p_s·D_child/(D·P_t(t+dt))`.
pub fn spd_to_pi(spd: &StatePriceDensity, m: &TermStructureModel, step: usize, i: usize) -> Vec<f64> {
    let lat = m.lattice();
    let node = &lat.levels()[step].nodes()[i];
    let p1 = m.log_bond_idx(step, &node.w, step + 1).exp();
    let d = spd.values[step][i];
    lat.factor()
        .probs()
        .iter()
        .enumerate()
        .map(|(s, p)| p * spd.values[step + 1][lat.child_index(step, i, s)] / (d * p1))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NasReport {
    /// Worst relative disagreement between densities built along different
    /// parents of the same node (path independence of D built from π).
    pub density_consistency: f64,
    /// Worst `|π → D → π|` deviation.
    pub pi_round_trip: f64,
    /// Worst relative gap between `E[D_T|F_t]/D_t` and model bond prices.
    pub spd_pricing: f64,
    /// Worst relative gap between the constructed density and the anchored
    /// canonical one (stationary models only; zero otherwise).
    pub canonical_gap: f64,
    pub min_density: f64,
}

impl NasReport {
    pub fn max_deviation(&self) -> f64 {
        self.density_consistency.max(self.pi_round_trip).max(self.spd_pricing).max(self.canonical_gap)
    }
}

/// Builds D from the model's risk-neutral kernel (`D_0 = 1`), checks that it
/// is a well-defined node function, recovers π from it, and prices bonds
/// with it.
pub fn nas_equivalence_check(m: &TermStructureModel) -> Result<NasReport> {
    let lat = m.lattice();
    let f = m.factor();
    let size = f.size();
    let depth = lat.horizon();
    let mut values: Vec<Vec<f64>> = lat.levels().iter().map(|l| vec![f64::NAN; l.len()]).collect();
    values[0][0] = 1.0;
    let mut consistency: f64 = 0.0;
    for t in 0..depth {
        let pi = one_step_kernel(m, t);
        for (i, node) in lat.levels()[t].nodes().iter().enumerate() {
            let p1 = m.log_bond_idx(t, &node.w, t + 1).exp();
            let d = values[t][i];
            for s in 0..size {
                let candidate = d * pi[s] * p1 / f.probs()[s];
                let j = lat.child_index(t, i, s);
                let slot = &mut values[t + 1][j];
                if slot.is_nan() {
                    *slot = candidate;
                } else {
                    consistency = consistency.max((candidate / *slot - 1.0).abs());
                }
            }
        }
    }
    let spd = StatePriceDensity { values };
    let min_density = spd.values.iter().flatten().cloned().fold(f64::INFINITY, f64::min);
    if !(min_density > 0.0) {
        return Err(Error::invalid("constructed state-price density is not strictly positive"));
    }

    let mut round_trip: f64 = 0.0;
    for t in 0..depth {
        let pi = one_step_kernel(m, t);
        for i in 0..lat.levels()[t].len() {
            let back = spd_to_pi(&spd, m, t, i);
            for (a, b) in back.iter().zip(&pi) {
                round_trip = round_trip.max((a - b).abs());
            }
        }
    }

    let mut pricing: f64 = 0.0;
    for k in 1..=depth {
        let cond = conditional_spd(&spd, lat, k);
        for t in 0..=k {
            for (i, node) in lat.levels()[t].nodes().iter().enumerate() {
                let model = m.log_bond_idx(t, &node.w, k).exp();
                let implied = cond[t][i] / spd.values[t][i];
                pricing = pricing.max((implied / model - 1.0).abs());
            }
        }
    }

    let mut canonical_gap: f64 = 0.0;
    if matches!(m.dynamics(), Dynamics::Stationary) {
        let canon = canonical_spd(m.vol(), lat)?.anchored(lat, m.initial());
        for (a, b) in canon.values.iter().flatten().zip(spd.values.iter().flatten()) {
            canonical_gap = canonical_gap.max((a / b - 1.0).abs());
        }
    }

    Ok(NasReport { density_consistency: consistency, pi_round_trip: round_trip, spd_pricing: pricing, canonical_gap, min_density })
}

/// The yield-parameterized candidate
/// `−log P^{(t)}(τ) = τ·dt·(⟨σ(τ), w_t⟩ + μ(τ)·t·dt)` with `τ` in steps to
/// maturity. `sigma[τ]` and `mu[τ]` are indexed by `τ` (entry 0 unused).
#[derive(Debug, Clone)]
pub struct YieldStationaryModel {
    pub factor: FactorDistribution,
    pub sigma: Vec<Vec<f64>>,
    pub mu: Vec<f64>,
}

impl YieldStationaryModel {
    pub fn log_price(&self, t: usize, w: &[f64], tau: usize) -> f64 {
        if tau == 0 {
            return 0.0;
        }
        let dt = self.factor.dt();
        -(tau as f64) * dt * (dot(&self.sigma[tau], w) + self.mu[tau] * t as f64 * dt)
    }

    /// Worst node, over `steps` steps, of the smallest achievable
    /// `max_τ |E^π[H(τ)] − 1|` with `H(τ) = P^{(t+1)}(τ)·P^{(t)}(1)/P^{(t)}(τ+1)`.
    /// Exact minimax over π for a binary factor; for larger factors a lower
    /// bound from the least-squares relaxation.
    pub fn min_martingale_residual(&self, steps: usize) -> Result<f64> {
        let max_tau = self.sigma.len() - 1;
        if max_tau < 2 || self.mu.len() != self.sigma.len() {
            return Err(Error::invalid("yield-stationary model needs σ and μ for τ = 0..=M with M ≥ 2"));
        }
        let lat = Lattice::build(&self.factor, steps)?;
        let size = self.factor.size();
        let mut worst: f64 = 0.0;
        for t in 0..steps {
            for (i, node) in lat.levels()[t].nodes().iter().enumerate() {
                let h: Vec<Vec<f64>> = (1..max_tau)
                    .map(|tau| {
                        (0..size)
                            .map(|s| {
                                let child = &lat.levels()[t + 1].nodes()[lat.child_index(t, i, s)];
                                (self.log_price(t + 1, &child.w, tau) + self.log_price(t, &node.w, 1)
                                    - self.log_price(t, &node.w, tau + 1))
                                .exp()
                            })
                            .collect()
                    })
                    .collect();
                let r = if size == 2 { binary_minimax(&h) } else { least_squares_bound(&h) };
                worst = worst.max(r);
            }
        }
        Ok(worst)
    }
}

fn binary_minimax(h: &[Vec<f64>]) -> f64 {
    let g = |pi: f64| h.iter().map(|r| ((1.0 - pi) * r[0] + pi * r[1] - 1.0).abs()).fold(0.0, f64::max);
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (0.0, 1.0);
    for _ in 0..200 {
        let c = b - phi * (b - a);
        let d = a + phi * (b - a);
        if g(c) <= g(d) {
            b = d;
        } else {
            a = c;
        }
    }
    g(0.5 * (a + b))
}

fn least_squares_bound(h: &[Vec<f64>]) -> f64 {
    // π = π₀ + N·z over the affine set Σπ = 1; minimize Σ_τ (H_τ·π − 1)²
    let size = h[0].len();
    let k = h.len();
    let a = DMatrix::from_fn(k, size - 1, |r, c| h[r][c + 1] - h[r][0]);
    let b = DVector::from_fn(k, |r, _| 1.0 - h[r][0]);
    let svd = a.clone().svd(true, true);
    let z = svd.solve(&b, 1e-14).unwrap_or_else(|_| DVector::zeros(size - 1));
    let res = (&a * z - b).norm_squared();
    (res / k as f64).sqrt()
}
