//! Present value, durations, convexities and the one-step P&L expansions of
//! a deterministic cash-flow stream, plus duration hedging.
//!
//! Durations are reported positive for a long cash flow. Generalized
//! durations replace time to maturity by the factor loading `ρ(T_l) − ρ(t)`
//! that the log bond price carries on the state.
//!
//! The discrete Itô expansion is exact because `{1, Δw¹/√dt, …, Δwⁿ/√dt}` is
//! an orthonormal basis of functions on the n+1 outcomes: the one-step
//! return `φ(s)` of any portfolio satisfies
//!
//! ```text
//! φ(s) = −Σ_j D̃_j Δw^j(s) + ½ D̃² dt,   D̃_j = −E[φ Δw^j]/dt,   D̃² = 2 E[φ]/dt.
//! ```

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::to_steps;
use crate::lattice::LatticeNode;
use crate::model::TermStructureModel;

/// Singular values below this fraction of the largest count as zero.
pub const HEDGE_RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CashFlow {
    /// `(maturity in years, amount)` with strictly increasing maturities.
    pub legs: Vec<(f64, f64)>,
}

impl CashFlow {
    pub fn new(legs: Vec<(f64, f64)>) -> Result<Self> {
        if legs.iter().any(|(t, a)| !t.is_finite() || !a.is_finite()) {
            return Err(Error::invalid("cash flow legs must be finite"));
        }
        if legs.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::invalid("cash flow maturities must be strictly increasing"));
        }
        Ok(Self { legs })
    }

    pub fn zero_coupon(t: f64, amount: f64) -> Result<Self> {
        Self::new(vec![(t, amount)])
    }
}

struct Leg {
    k: usize,
    amount: f64,
    log_price: f64,
}

impl Leg {
    fn value(&self) -> f64 {
        self.amount * self.log_price.exp()
    }
}

fn legs(cf: &CashFlow, m: &TermStructureModel, node: &LatticeNode) -> Result<Vec<Leg>> {
    m.lattice().locate(node)?;
    cf.legs
        .iter()
        .map(|&(t, amount)| {
            let k = to_steps(t, m.dt(), "cash flow maturity")?;
            if k <= node.step || k > m.horizon() {
                return Err(Error::OutOfRange(format!(
                    "cash flow at {t} must fall in ({}, {}]",
                    node.step as f64 * m.dt(),
                    m.horizon() as f64 * m.dt()
                )));
            }
            Ok(Leg { k, amount, log_price: m.log_bond_idx(node.step, &node.w, k) })
        })
        .collect()
}

fn nonzero(pv: f64) -> Result<f64> {
    if pv == 0.0 || !pv.is_finite() {
        Err(Error::invalid(format!("present value {pv} is zero or not finite")))
    } else {
        Ok(pv)
    }
}

fn loading(m: &TermStructureModel, t: usize, k: usize) -> Vec<f64> {
    m.vol().rho_at(k).iter().zip(m.vol().rho_at(t)).map(|(a, b)| a - b).collect()
}

pub fn present_value(cf: &CashFlow, m: &TermStructureModel, node: &LatticeNode) -> Result<f64> {
    Ok(legs(cf, m, node)?.iter().map(Leg::value).sum())
}

fn weighted_moment(cf: &CashFlow, m: &TermStructureModel, node: &LatticeNode, power: i32) -> Result<f64> {
    let ls = legs(cf, m, node)?;
    let pv = nonzero(ls.iter().map(Leg::value).sum())?;
    let dt = m.dt();
    Ok(ls.iter().map(|l| ((l.k - node.step) as f64 * dt).powi(power) * l.value()).sum::<f64>() / pv)
}

/// `PV⁻¹ Σ (T_l − t) CF_l P_t(T_l)`.
pub fn duration(cf: &CashFlow, m: &TermStructureModel, node: &LatticeNode) -> Result<f64> {
    weighted_moment(cf, m, node, 1)
}

/// `PV⁻¹ Σ (T_l − t)² CF_l P_t(T_l)`, reported as a positive magnitude.
pub fn convexity(cf: &CashFlow, m: &TermStructureModel, node: &LatticeNode) -> Result<f64> {
    weighted_moment(cf, m, node, 2)
}

/// PV-weighted loadings `Σ_l (ρ(T_l) − ρ(t)) CF_l P_t(T_l)`, unnormalized.
fn dollar_durations(ls: &[Leg], m: &TermStructureModel, t: usize) -> Vec<f64> {
    let mut g = vec![0.0; m.factor().n()];
    for l in ls {
        let v = l.value();
        for (gj, r) in g.iter_mut().zip(loading(m, t, l.k)) {
            *gj += r * v;
        }
    }
    g
}

fn dollar_convexities(ls: &[Leg], m: &TermStructureModel, t: usize) -> Vec<Vec<f64>> {
    let n = m.factor().n();
    let mut g = vec![vec![0.0; n]; n];
    for l in ls {
        let v = l.value();
        let r = loading(m, t, l.k);
        for a in 0..n {
            for b in 0..n {
                g[a][b] += r[a] * r[b] * v;
            }
        }
    }
    g
}

pub fn generalized_durations(cf: &CashFlow, m: &TermStructureModel, node: &LatticeNode) -> Result<Vec<f64>> {
    let ls = legs(cf, m, node)?;
    let pv = nonzero(ls.iter().map(Leg::value).sum())?;
    Ok(dollar_durations(&ls, m, node.step).into_iter().map(|g| g / pv).collect())
}

pub fn generalized_convexities(cf: &CashFlow, m: &TermStructureModel, node: &LatticeNode) -> Result<Vec<Vec<f64>>> {
    let ls = legs(cf, m, node)?;
    let pv = nonzero(ls.iter().map(Leg::value).sum())?;
    Ok(dollar_convexities(&ls, m, node.step).into_iter().map(|r| r.into_iter().map(|g| g / pv).collect()).collect())
}

fn child_of<'a>(m: &'a TermStructureModel, node: &LatticeNode, s: usize) -> Result<&'a LatticeNode> {
    if s >= m.factor().size() {
        return Err(Error::OutOfRange(format!("outcome index {s}")));
    }
    let kids = m.lattice().children(node)?;
    Ok(kids[s].1)
}

/// `(PV at the child reached by outcome s − PV) / PV`.
pub fn revaluation_pnl(cf: &CashFlow, m: &TermStructureModel, node: &LatticeNode, s: usize) -> Result<f64> {
    let pv = nonzero(present_value(cf, m, node)?)?;
    let child = child_of(m, node, s)?;
    let ls = legs(cf, m, node)?;
    let next: f64 = ls.iter().map(|l| l.amount * m.log_bond_idx(child.step, &child.w, l.k).exp()).sum();
    Ok((next - pv) / pv)
}

/// Second-order expansion of the one-step return for outcome `s`:
/// `Σ_l w_l (a_l + ½ a_l² + d_l)` with `w_l = CF_l P_t(T_l)/PV`,
/// `a_l = −⟨ρ(T_l) − ρ(t), Δw(s)⟩` and the deterministic part
/// `d_l = dt·F_t(t) − dt²·Σ_{u=t+1}^{T_l−1} ν_{t+1}(u)`.
pub fn taylor_pnl(cf: &CashFlow, m: &TermStructureModel, node: &LatticeNode, s: usize) -> Result<f64> {
    if s >= m.factor().size() {
        return Err(Error::OutOfRange(format!("outcome index {s}")));
    }
    let ls = legs(cf, m, node)?;
    let pv = nonzero(ls.iter().map(Leg::value).sum())?;
    let t = node.step;
    let dt = m.dt();
    let dw = m.factor().outcome(s);
    let short = dt * m.forward_idx(t, &node.w, t);
    let mut total = 0.0;
    for l in &ls {
        let a = -loading(m, t, l.k).iter().zip(dw).map(|(r, x)| r * x).sum::<f64>();
        let drift: f64 = (t + 1..l.k).map(|u| m.drift_increment(t + 1, u)).sum();
        let d = short - dt * dt * drift;
        total += l.value() / pv * (a + 0.5 * a * a + d);
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItoExpansion {
    /// `ΔPV/PV` for the requested outcome, rebuilt from the coefficients.
    pub pnl: f64,
    /// `D̃_j`.
    pub d: Vec<f64>,
    /// `D̃²`.
    pub d2: f64,
}

fn ito_coefficients(cf: &CashFlow, m: &TermStructureModel, node: &LatticeNode) -> Result<(Vec<f64>, f64)> {
    let f = m.factor();
    let dt = m.dt();
    let phi: Vec<f64> = (0..f.size()).map(|s| revaluation_pnl(cf, m, node, s)).collect::<Result<_>>()?;
    let mut d = vec![0.0; f.n()];
    let mut mean = 0.0;
    for (s, (p, x)) in f.probs().iter().zip(&phi).enumerate() {
        mean += p * x;
        for (dj, w) in d.iter_mut().zip(f.outcome(s)) {
            *dj -= p * x * w / dt;
        }
    }
    Ok((d, 2.0 * mean / dt))
}

/// Exact one-step return for outcome `s` through the discrete Itô expansion.
pub fn ito_pnl(cf: &CashFlow, m: &TermStructureModel, node: &LatticeNode, s: usize) -> Result<ItoExpansion> {
    if s >= m.factor().size() {
        return Err(Error::OutOfRange(format!("outcome index {s}")));
    }
    let (d, d2) = ito_coefficients(cf, m, node)?;
    let dw = m.factor().outcome(s);
    let pnl = -d.iter().zip(dw).map(|(a, b)| a * b).sum::<f64>() + 0.5 * d2 * m.dt();
    Ok(ItoExpansion { pnl, d, d2 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HedgeMode {
    Delta,
    DeltaGamma,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HedgeResult {
    pub weights: Vec<f64>,
    /// Largest absolute residual of the (row-scaled) hedge equations.
    pub residual: f64,
    pub rank: usize,
}

/// Instrument weights that zero the portfolio's generalized durations (and,
/// in delta-gamma mode, its generalized convexities). Exact systems are
/// solved directly, overdetermined ones in least squares and
/// underdetermined ones at minimum norm.
pub fn hedge(
    target: &CashFlow,
    instruments: &[CashFlow],
    m: &TermStructureModel,
    node: &LatticeNode,
    mode: HedgeMode,
) -> Result<HedgeResult> {
    if instruments.is_empty() {
        return Err(Error::invalid("hedge needs at least one instrument"));
    }
    let n = m.factor().n();
    let row = |cf: &CashFlow| -> Result<Vec<f64>> {
        let ls = legs(cf, m, node)?;
        nonzero(ls.iter().map(Leg::value).sum())?;
        let mut r = dollar_durations(&ls, m, node.step);
        if mode == HedgeMode::DeltaGamma {
            let c = dollar_convexities(&ls, m, node.step);
            for a in 0..n {
                for b in a..n {
                    r.push(c[a][b]);
                }
            }
        }
        Ok(r)
    };
    let tgt = row(target)?;
    let cols: Vec<Vec<f64>> = instruments.iter().map(row).collect::<Result<_>>()?;
    let eqs = tgt.len();
    let q = cols.len();
    let mut a = DMatrix::from_fn(eqs, q, |j, i| cols[i][j]);
    let mut b = DVector::from_fn(eqs, |j, _| -tgt[j]);
    for j in 0..eqs {
        let scale = a.row(j).amax().max(b[j].abs());
        if scale > 0.0 {
            a.row_mut(j).scale_mut(1.0 / scale);
            b[j] /= scale;
        }
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let cutoff = HEDGE_RANK_TOL * smax;
    let rank = svd.singular_values.iter().filter(|s| **s > cutoff).count();
    let required = eqs.min(q);
    if smax == 0.0 || rank < required {
        let smallest = svd.singular_values.min();
        return Err(Error::Singular { rank, required, smallest });
    }
    let x = svd.solve(&b, cutoff).map_err(|e| Error::invalid(e.to_string()))?;
    let residual = (&a * &x - &b).amax();
    Ok(HedgeResult { weights: x.iter().cloned().collect(), residual, rank })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub pv: f64,
    pub duration: f64,
    pub convexity: f64,
    pub gen_durations: Vec<f64>,
    pub gen_convexities: Vec<Vec<f64>>,
    pub ito_d: Vec<f64>,
    pub ito_d2: f64,
}

pub fn report(cf: &CashFlow, m: &TermStructureModel, node: &LatticeNode) -> Result<SensitivityReport> {
    let (ito_d, ito_d2) = ito_coefficients(cf, m, node)?;
    Ok(SensitivityReport {
        pv: present_value(cf, m, node)?,
        duration: duration(cf, m, node)?,
        convexity: convexity(cf, m, node)?,
        gen_durations: generalized_durations(cf, m, node)?,
        gen_convexities: generalized_convexities(cf, m, node)?,
        ito_d,
        ito_d2,
    })
}
