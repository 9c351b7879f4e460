//! File formats.
//!
//! All CSV files are comma-separated with a required header and dot-decimal
//! numbers. Floats are written in shortest round-trip form, so reading a
//! written file reproduces the values bit for bit. Dates are ISO-8601.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factors::FactorDistribution;
use crate::grid::to_steps;
use crate::ikrs::ConvergenceRow;
use crate::model::{Dynamics, ForwardCurve, ModelOptions, TermStructureModel};
use crate::sensitivity::CashFlow;
use crate::volstruct::{CoarseVolMatrix, VolatilityTermStructure};

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.display().to_string(), source })
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Io { path: path.display().to_string(), source })
}

fn parse_err(path: &str, line: u64, message: impl Into<String>) -> Error {
    Error::Parse { path: path.to_string(), line, message: message.into() }
}

/// Flat `key = value` configuration; blank lines and `#` comments ignored.
pub fn parse_config(text: &str, path: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| parse_err(path, i as u64 + 1, "expected key=value"))?;
        let key = k.trim();
        if key.is_empty() {
            return Err(parse_err(path, i as u64 + 1, "empty key"));
        }
        if out.insert(key.to_string(), v.trim().to_string()).is_some() {
            return Err(parse_err(path, i as u64 + 1, format!("duplicate key `{key}`")));
        }
    }
    Ok(out)
}

pub fn read_config(path: &Path) -> Result<BTreeMap<String, String>> {
    parse_config(&read_text(path)?, &path.display().to_string())
}

struct Table {
    path: String,
    header: Vec<String>,
    rows: Vec<(u64, Vec<String>)>,
}

fn parse_table(text: &str, path: &str) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.iter().all(String::is_empty) {
        return Err(parse_err(path, 1, "missing header"));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(path, line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        rows.push((line, rec.iter().map(str::to_string).collect()));
    }
    Ok(Table { path: path.to_string(), header, rows })
}

impl Table {
    fn expect_header(&self, names: &[String]) -> Result<()> {
        for (i, name) in names.iter().enumerate() {
            if self.header.get(i) != Some(name) {
                return Err(parse_err(&self.path, 1, format!("missing header column `{name}` at position {}", i + 1)));
            }
        }
        if self.header.len() > names.len() {
            return Err(parse_err(&self.path, 1, format!("unexpected header column `{}`", self.header[names.len()])));
        }
        Ok(())
    }

    fn float(&self, line: u64, col: usize, value: &str) -> Result<f64> {
        let x: f64 = value
            .parse()
            .map_err(|_| parse_err(&self.path, line, format!("column `{}`: `{value}` is not a number", self.header[col])))?;
        if !x.is_finite() {
            return Err(parse_err(&self.path, line, format!("column `{}`: value is not finite", self.header[col])));
        }
        Ok(x)
    }

    fn floats(&self, line: u64, fields: &[String], from: usize) -> Result<Vec<f64>> {
        fields[from..].iter().enumerate().map(|(j, v)| self.float(line, from + j, v)).collect()
    }

    fn nonempty(&self) -> Result<()> {
        if self.rows.is_empty() {
            Err(parse_err(&self.path, 1, "no data rows"))
        } else {
            Ok(())
        }
    }
}

fn fmt_row(values: impl IntoIterator<Item = String>) -> String {
    let mut s = values.into_iter().collect::<Vec<_>>().join(",");
    s.push('\n');
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct History {
    pub dates: Vec<NaiveDate>,
    /// Bucket forwards per date.
    pub levels: Vec<Vec<f64>>,
}

/// Header `date,F_1,…,F_k`.
pub fn parse_history(text: &str, path: &str) -> Result<History> {
    let t = parse_table(text, path)?;
    let k = t.header.len().saturating_sub(1);
    if k == 0 {
        return Err(parse_err(path, 1, "history needs `date` and at least one column `F_1`"));
    }
    let names: Vec<String> = std::iter::once("date".to_string()).chain((1..=k).map(|i| format!("F_{i}"))).collect();
    t.expect_header(&names)?;
    t.nonempty()?;
    let mut dates = Vec::with_capacity(t.rows.len());
    let mut levels = Vec::with_capacity(t.rows.len());
    for (line, fields) in &t.rows {
        let d = NaiveDate::parse_from_str(&fields[0], "%Y-%m-%d")
            .map_err(|_| parse_err(path, *line, format!("`{}` is not an ISO-8601 date", fields[0])))?;
        if let Some(prev) = dates.last() {
            if d <= *prev {
                return Err(parse_err(path, *line, "dates must be strictly increasing"));
            }
        }
        dates.push(d);
        levels.push(t.floats(*line, fields, 1)?);
    }
    Ok(History { dates, levels })
}

pub fn read_history(path: &Path) -> Result<History> {
    parse_history(&read_text(path)?, &path.display().to_string())
}

/// Requires consecutive observations `dt` years apart, allowing for calendar
/// rounding of half a period plus a day and a half.
pub fn check_spacing(h: &History, dt: f64) -> Result<()> {
    let expected = dt * 365.25;
    let tol = 0.5 * expected + 1.5;
    for w in h.dates.windows(2) {
        let gap = (w[1] - w[0]).num_days() as f64;
        if (gap - expected).abs() > tol {
            return Err(Error::invalid(format!(
                "observations {} and {} are {gap} days apart, expected about {expected:.1}",
                w[0], w[1]
            )));
        }
    }
    Ok(())
}

pub fn format_history(h: &History) -> String {
    let k = h.levels.first().map_or(0, Vec::len);
    let mut s = fmt_row(std::iter::once("date".to_string()).chain((1..=k).map(|i| format!("F_{i}"))));
    for (d, row) in h.dates.iter().zip(&h.levels) {
        s += &fmt_row(std::iter::once(d.format("%Y-%m-%d").to_string()).chain(row.iter().map(f64::to_string)));
    }
    s
}

/// Header `tenor,mu,sigma1,…,sigman`; one row per bucket right endpoint, the
/// first bucket starting at maturity 0.
pub fn parse_volmatrix(text: &str, path: &str) -> Result<CoarseVolMatrix> {
    let t = parse_table(text, path)?;
    let n = t.header.len().saturating_sub(2);
    if n == 0 {
        return Err(parse_err(path, 1, "volatility matrix needs `tenor`, `mu` and at least `sigma1`"));
    }
    let names: Vec<String> = ["tenor".to_string(), "mu".to_string()].into_iter().chain((1..=n).map(|i| format!("sigma{i}"))).collect();
    t.expect_header(&names)?;
    t.nonempty()?;
    let mut tenors = vec![0.0];
    let mut mu = Vec::new();
    let mut sigma = Vec::new();
    for (line, fields) in &t.rows {
        let v = t.floats(*line, fields, 0)?;
        if v[0] <= *tenors.last().unwrap() {
            return Err(parse_err(path, *line, "tenors must be positive and strictly increasing"));
        }
        tenors.push(v[0]);
        mu.push(v[1]);
        sigma.push(v[2..].to_vec());
    }
    CoarseVolMatrix::new(tenors, mu, sigma)
}

pub fn read_volmatrix(path: &Path) -> Result<CoarseVolMatrix> {
    parse_volmatrix(&read_text(path)?, &path.display().to_string())
}

pub fn format_volmatrix(c: &CoarseVolMatrix) -> Result<String> {
    if c.tenors()[0] != 0.0 {
        return Err(Error::invalid("only matrices whose first bucket starts at 0 can be written"));
    }
    let mut s = fmt_row(["tenor".to_string(), "mu".to_string()].into_iter().chain((1..=c.n()).map(|i| format!("sigma{i}"))));
    for (i, row) in c.sigma().iter().enumerate() {
        s += &fmt_row([c.tenors()[i + 1].to_string(), c.mu()[i].to_string()].into_iter().chain(row.iter().map(f64::to_string)));
    }
    Ok(s)
}

/// Header `T,F0`. Rows start at `T = 0`, lie on the grid and increase; each
/// value holds until the next row and the last one to the horizon.
pub fn parse_curve(text: &str, path: &str, dt: f64, horizon: usize) -> Result<ForwardCurve> {
    let t = parse_table(text, path)?;
    t.expect_header(&["T".to_string(), "F0".to_string()])?;
    t.nonempty()?;
    let mut knots: Vec<(usize, f64)> = Vec::new();
    for (line, fields) in &t.rows {
        let v = t.floats(*line, fields, 0)?;
        let k = to_steps(v[0], dt, "T").map_err(|e| parse_err(path, *line, e.to_string()))?;
        match knots.last() {
            None if k != 0 => return Err(parse_err(path, *line, "the first row must be T = 0")),
            Some((prev, _)) if k <= *prev => return Err(parse_err(path, *line, "maturities must be strictly increasing")),
            _ => {}
        }
        if k >= horizon {
            return Err(parse_err(path, *line, format!("T = {} is at or beyond the horizon", v[0])));
        }
        knots.push((k, v[1]));
    }
    let mut values = Vec::with_capacity(horizon);
    for k in 0..horizon {
        let i = knots.partition_point(|(kk, _)| *kk <= k) - 1;
        values.push(knots[i].1);
    }
    ForwardCurve::new(0, dt, values)
}

pub fn read_curve(path: &Path, dt: f64, horizon: usize) -> Result<ForwardCurve> {
    parse_curve(&read_text(path)?, &path.display().to_string(), dt, horizon)
}

pub fn format_curve(c: &ForwardCurve) -> String {
    let mut s = fmt_row(["T".to_string(), "F0".to_string()]);
    for (j, v) in c.values.iter().enumerate() {
        s += &fmt_row([((c.asof + j) as f64 * c.dt).to_string(), v.to_string()]);
    }
    s
}

/// Header `T,amount`.
pub fn parse_cashflows(text: &str, path: &str) -> Result<CashFlow> {
    let t = parse_table(text, path)?;
    t.expect_header(&["T".to_string(), "amount".to_string()])?;
    let mut legs = Vec::new();
    for (line, fields) in &t.rows {
        let v = t.floats(*line, fields, 0)?;
        if let Some((prev, _)) = legs.last() {
            if v[0] <= *prev {
                return Err(parse_err(path, *line, "maturities must be strictly increasing"));
            }
        }
        legs.push((v[0], v[1]));
    }
    CashFlow::new(legs)
}

pub fn read_cashflows(path: &Path) -> Result<CashFlow> {
    parse_cashflows(&read_text(path)?, &path.display().to_string())
}

/// Header `instrument,T,amount`; instruments keep the order of first
/// appearance.
pub fn parse_instruments(text: &str, path: &str) -> Result<Vec<(String, CashFlow)>> {
    let t = parse_table(text, path)?;
    t.expect_header(&["instrument".to_string(), "T".to_string(), "amount".to_string()])?;
    t.nonempty()?;
    let mut out: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for (line, fields) in &t.rows {
        let v = t.floats(*line, fields, 1)?;
        let name = &fields[0];
        if name.is_empty() {
            return Err(parse_err(path, *line, "empty instrument name"));
        }
        let legs = match out.iter().position(|(n, _)| n == name) {
            Some(i) => &mut out[i].1,
            None => {
                out.push((name.clone(), Vec::new()));
                &mut out.last_mut().unwrap().1
            }
        };
        if let Some((prev, _)) = legs.last() {
            if v[0] <= *prev {
                return Err(parse_err(path, *line, format!("maturities of `{name}` must be strictly increasing")));
            }
        }
        legs.push((v[0], v[1]));
    }
    out.into_iter().map(|(n, l)| Ok((n, CashFlow::new(l)?))).collect()
}

pub fn read_instruments(path: &Path) -> Result<Vec<(String, CashFlow)>> {
    parse_instruments(&read_text(path)?, &path.display().to_string())
}

pub fn format_convergence(rows: &[ConvergenceRow]) -> String {
    let mut s = fmt_row(["dt", "drift_err", "mean_err", "var_err"].map(str::to_string));
    for r in rows {
        s += &fmt_row([r.dt, r.drift_err, r.mean_err, r.var_err].map(|x| x.to_string()));
    }
    s
}

/// `t=<step>:counts=<c0,…,cn>`.
pub fn parse_node_spec(spec: &str) -> Result<(usize, Vec<u32>)> {
    let bad = || Error::invalid(format!("node spec `{spec}` must look like t=<step>:counts=<c0,…,cn>"));
    let (a, b) = spec.split_once(':').ok_or_else(bad)?;
    let step = a.trim().strip_prefix("t=").ok_or_else(bad)?.trim().parse().map_err(|_| bad())?;
    let counts = b
        .trim()
        .strip_prefix("counts=")
        .ok_or_else(bad)?
        .split(',')
        .map(|c| c.trim().parse::<u32>().map_err(|_| bad()))
        .collect::<Result<Vec<_>>>()?;
    Ok((step, counts))
}

/// Serialized model: loadings, drift, initial curve and the martingale error
/// measured when it was built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub dt: f64,
    pub horizon: usize,
    /// Lattice depth the martingale check covered.
    pub depth: usize,
    pub factor: FactorDistribution,
    pub sigma: Vec<Vec<f64>>,
    pub mu: Vec<f64>,
    pub initial: Vec<f64>,
    pub dynamics: Dynamics,
    pub martingale_error: f64,
    pub tolerance: f64,
}

impl ModelBundle {
    pub fn from_model(m: &TermStructureModel, tolerance: f64) -> Result<Self> {
        let martingale_error = m.martingale_error().ok_or_else(|| Error::invalid("model was built without a martingale check"))?;
        Ok(Self {
            dt: m.dt(),
            horizon: m.horizon(),
            depth: m.lattice().horizon(),
            factor: m.factor().clone(),
            sigma: m.vol().sigma().to_vec(),
            mu: m.vol().mu().to_vec(),
            initial: m.initial().values.clone(),
            dynamics: m.dynamics().clone(),
            martingale_error,
            tolerance,
        })
    }

    /// Rebuilds the model, re-running the martingale check at `tolerance`.
    pub fn to_model(&self, tolerance: f64, max_nodes: usize) -> Result<TermStructureModel> {
        let vol = VolatilityTermStructure::with_mu(self.dt, self.sigma.clone(), self.mu.clone())?;
        let init = ForwardCurve::new(0, self.dt, self.initial.clone())?;
        let opts = ModelOptions { martingale_tol: Some(tolerance), max_nodes, lattice_horizon: Some(self.depth) };
        TermStructureModel::assemble(&self.factor, vol, init, self.dynamics.clone(), &opts)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::invalid(e.to_string()))
    }

    pub fn from_json(text: &str, path: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| parse_err(path, e.line() as u64, e.to_string()))
    }
}

pub fn read_bundle(path: &Path) -> Result<ModelBundle> {
    ModelBundle::from_json(&read_text(path)?, &path.display().to_string())
}
