//! Command-line surface.
//!
//! Every option can also come from a flat `key=value` file given by
//! `--config`; keys are the long flag names without dashes and flags win.
//! The primary artifact of a command goes to `--out` or, without it, to
//! stdout. Secondary summaries go to stderr.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::factors::{FactorDistribution, OrthogonalSpec};
use crate::grid::{check_dt, to_steps};
use crate::ikrs::{convergence_test, PiecewiseLinearRho};
use crate::io::{self, ModelBundle};
use crate::lattice::{LatticeNode, DEFAULT_MAX_NODES};
use crate::model::{Dynamics, ModelOptions, TermStructureModel};
use crate::noarb;
use crate::pca::{self, FactorPolicy, SampleSet};
use crate::sensitivity::{self, CashFlow, HedgeMode};
use crate::simulate;
use crate::volstruct::interpolate;

#[derive(Debug, Parser)]
#[command(name = "holee", version, about = "Stationary multi-factor Ho-Lee term-structure engine")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub opts: Options,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DriftSource {
    /// Use the drift that makes bond prices martingales.
    ArbitrageFree,
    /// Keep the mu column of the volatility matrix.
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Delta,
    DeltaGamma,
}

#[derive(Debug, Default, Args)]
pub struct Options {
    /// Flat key=value file supplying defaults for any option.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Time step in years.
    #[arg(long, global = true)]
    pub dt: Option<String>,
    /// Model horizon in years.
    #[arg(long, global = true)]
    pub horizon: Option<String>,
    /// Fixed number of factors.
    #[arg(long, global = true)]
    pub factors: Option<String>,
    /// Explained-variance threshold in (0, 1].
    #[arg(long, global = true)]
    pub theta: Option<String>,
    /// Martingale tolerance.
    #[arg(long, global = true)]
    pub tol: Option<String>,
    /// Random seed for simulation.
    #[arg(long, global = true)]
    pub seed: Option<String>,
    /// Output file (stdout when omitted).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Bucket right endpoints in years, comma-separated; the first bucket starts at 0.
    #[arg(long, global = true)]
    pub tenors: Option<String>,
    /// Orthogonal matrix file defining the one-step factor distribution.
    #[arg(long = "factor-matrix", global = true)]
    pub factor_matrix: Option<String>,
    /// Where the bucket drift comes from.
    #[arg(long, global = true, value_enum)]
    pub drift: Option<DriftSource>,
    /// Lattice depth in steps (defaults to the full horizon).
    #[arg(long, global = true)]
    pub depth: Option<String>,
    /// Node budget for the materialized lattice.
    #[arg(long = "max-nodes", global = true)]
    pub max_nodes: Option<String>,
    /// Valuation node, `t=<step>:counts=<c0,…,cn>`; defaults to the root.
    #[arg(long, global = true)]
    pub node: Option<String>,
    /// Hedge the generalized durations only, or durations and convexities.
    #[arg(long, global = true, value_enum)]
    pub mode: Option<Mode>,
    /// Number of simulated steps.
    #[arg(long, global = true)]
    pub steps: Option<String>,
    /// Number of dt halvings plus one in a convergence table.
    #[arg(long, global = true)]
    pub levels: Option<String>,
    /// Observation time in years for convergence moments.
    #[arg(long, global = true)]
    pub time: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate a coarse volatility matrix from a bucket-forward history.
    Calibrate { history: Option<PathBuf> },
    /// Assemble and verify a model bundle from a volatility matrix and an initial curve.
    Build { volmatrix: Option<PathBuf>, curve: Option<PathBuf> },
    /// Re-run the no-arbitrage checks on a bundle.
    Verify { bundle: Option<PathBuf> },
    /// Present value of a cash-flow stream at a node.
    Price { bundle: Option<PathBuf>, cashflows: Option<PathBuf> },
    /// Durations, convexities and Itô coefficients of a cash-flow stream.
    Sens { bundle: Option<PathBuf>, cashflows: Option<PathBuf> },
    /// Hedge weights that neutralize a target's generalized durations.
    Hedge { bundle: Option<PathBuf>, target: Option<PathBuf>, instruments: Option<PathBuf> },
    /// Convergence of the lattice bucket drift and moments to the Gaussian limit.
    Limit { volmatrix: Option<PathBuf> },
    /// Synthetic bucket-forward history sampled from a bundle.
    Simulate { bundle: Option<PathBuf> },
}

const KEYS: &[&str] = &[
    "dt", "horizon", "factors", "theta", "tol", "seed", "out", "tenors", "factor-matrix", "drift", "depth",
    "max-nodes", "node", "mode", "steps", "levels", "time", "history", "volmatrix", "curve", "bundle", "cashflows",
    "target", "instruments",
];

struct Settings {
    map: BTreeMap<String, String>,
}

impl Settings {
    fn new(opts: &Options) -> Result<Self> {
        let mut map = match &opts.config {
            Some(p) => io::read_config(p)?,
            None => BTreeMap::new(),
        };
        if let Some(k) = map.keys().find(|k| !KEYS.contains(&k.as_str())) {
            return Err(Error::invalid(format!("unknown config key `{k}`")));
        }
        let flags: [(&str, Option<String>); 17] = [
            ("dt", opts.dt.clone()),
            ("horizon", opts.horizon.clone()),
            ("factors", opts.factors.clone()),
            ("theta", opts.theta.clone()),
            ("tol", opts.tol.clone()),
            ("seed", opts.seed.clone()),
            ("out", opts.out.as_ref().map(|p| p.display().to_string())),
            ("tenors", opts.tenors.clone()),
            ("factor-matrix", opts.factor_matrix.clone()),
            ("drift", opts.drift.map(|d| d.to_possible_value().unwrap().get_name().to_string())),
            ("depth", opts.depth.clone()),
            ("max-nodes", opts.max_nodes.clone()),
            ("node", opts.node.clone()),
            ("mode", opts.mode.map(|d| d.to_possible_value().unwrap().get_name().to_string())),
            ("steps", opts.steps.clone()),
            ("levels", opts.levels.clone()),
            ("time", opts.time.clone()),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                map.insert(k.to_string(), v);
            }
        }
        Ok(Self { map })
    }

    fn set_path(&mut self, key: &str, p: &Option<PathBuf>) {
        if let Some(p) = p {
            self.map.insert(key.to_string(), p.display().to_string());
        }
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    fn require(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| Error::invalid(format!("missing `{key}` (flag --{key} or config key)")))
    }

    fn path(&self, key: &str) -> Result<PathBuf> {
        self.require(key).map(PathBuf::from)
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.get(key)
            .map(|v| v.parse::<T>().map_err(|_| Error::invalid(format!("`{key}` = `{v}` is not valid"))))
            .transpose()
    }

    fn float(&self, key: &str) -> Result<Option<f64>> {
        match self.parse::<f64>(key)? {
            Some(x) if !x.is_finite() => Err(Error::invalid(format!("`{key}` must be finite"))),
            x => Ok(x),
        }
    }

    fn dt(&self) -> Result<f64> {
        let dt = self.float("dt")?.ok_or_else(|| Error::invalid("missing `dt`"))?;
        check_dt(dt)?;
        Ok(dt)
    }

    fn tol(&self) -> Result<f64> {
        let tol = self.float("tol")?.unwrap_or(noarb::ARBITRAGE_TOL);
        if tol <= 0.0 {
            return Err(Error::invalid("tolerance must be positive"));
        }
        Ok(tol)
    }

    fn max_nodes(&self) -> Result<usize> {
        Ok(self.parse("max-nodes")?.unwrap_or(DEFAULT_MAX_NODES))
    }

    fn tenors(&self) -> Result<Vec<f64>> {
        let raw = self.require("tenors")?;
        let t: Vec<f64> = raw
            .split(',')
            .map(|x| x.trim().parse::<f64>().map_err(|_| Error::invalid(format!("tenor `{x}` is not a number"))))
            .collect::<Result<_>>()?;
        if t.first().is_some_and(|x| *x <= 0.0) || t.windows(2).any(|w| w[1] <= w[0]) || t.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("tenors must be positive and strictly increasing"));
        }
        Ok(t)
    }

    fn emit(&self, text: &str) -> Result<()> {
        match self.get("out") {
            Some(p) => io::write_text(Path::new(p), text),
            None => {
                print!("{text}");
                Ok(())
            }
        }
    }
}

fn json<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| Error::invalid(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn load_model(s: &Settings) -> Result<TermStructureModel> {
    io::read_bundle(&s.path("bundle")?)?.to_model(s.tol()?, s.max_nodes()?)
}

fn node_of<'a>(s: &Settings, m: &'a TermStructureModel) -> Result<&'a LatticeNode> {
    match s.get("node") {
        None => Ok(m.lattice().root()),
        Some(spec) => {
            let (step, counts) = io::parse_node_spec(spec)?;
            m.lattice().node(step, &counts)
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let mut s = Settings::new(&cli.opts)?;
    match &cli.command {
        Command::Calibrate { history } => {
            s.set_path("history", history);
            calibrate(&s)
        }
        Command::Build { volmatrix, curve } => {
            s.set_path("volmatrix", volmatrix);
            s.set_path("curve", curve);
            build(&s)
        }
        Command::Verify { bundle } => {
            s.set_path("bundle", bundle);
            verify(&s)
        }
        Command::Price { bundle, cashflows } => {
            s.set_path("bundle", bundle);
            s.set_path("cashflows", cashflows);
            price(&s)
        }
        Command::Sens { bundle, cashflows } => {
            s.set_path("bundle", bundle);
            s.set_path("cashflows", cashflows);
            sens(&s)
        }
        Command::Hedge { bundle, target, instruments } => {
            s.set_path("bundle", bundle);
            s.set_path("target", target);
            s.set_path("instruments", instruments);
            hedge(&s)
        }
        Command::Limit { volmatrix } => {
            s.set_path("volmatrix", volmatrix);
            limit(&s)
        }
        Command::Simulate { bundle } => {
            s.set_path("bundle", bundle);
            simulate_cmd(&s)
        }
    }
}

#[derive(Serialize)]
struct CalibrationReport<'a> {
    observations: usize,
    eigenvalues: &'a [f64],
    explained_variance: Vec<f64>,
    factors: usize,
    loadings: &'a [Vec<f64>],
    mean: &'a [f64],
}

fn calibrate(s: &Settings) -> Result<()> {
    let dt = s.dt()?;
    let policy = match (s.parse::<usize>("factors")?, s.float("theta")?) {
        (Some(_), Some(_)) => return Err(Error::invalid("give either `factors` or `theta`, not both")),
        (Some(n), None) => FactorPolicy::Fixed(n),
        (None, Some(t)) => FactorPolicy::Threshold(t),
        (None, None) => FactorPolicy::Threshold(0.99),
    };
    let h = io::read_history(&s.path("history")?)?;
    io::check_spacing(&h, dt)?;
    let ends = s.tenors()?;
    let k = h.levels[0].len();
    if ends.len() != k {
        return Err(Error::invalid(format!("history has {k} buckets but {} tenors were given", ends.len())));
    }
    let mut tenors = vec![0.0];
    tenors.extend(ends);
    let set = SampleSet::from_levels(tenors, &h.levels)?;
    let (c, r) = pca::calibrate(&set, dt, policy)?;
    let report = CalibrationReport {
        observations: h.levels.len(),
        eigenvalues: &r.eigenvalues,
        explained_variance: r.explained_variance(),
        factors: r.n,
        loadings: &r.loadings,
        mean: &r.mean,
    };
    eprint!("{}", json(&report)?);
    s.emit(&io::format_volmatrix(&c)?)
}

fn factor_for(s: &Settings, n: usize, dt: f64) -> Result<FactorDistribution> {
    let f = match s.get("factor-matrix") {
        Some(p) => {
            let text = io::read_text(Path::new(p))?;
            FactorDistribution::from_orthogonal_matrix(&OrthogonalSpec::from_text(&text, p)?, dt)?
        }
        None => FactorDistribution::equal_weight(n, dt)?,
    };
    if f.n() != n {
        return Err(Error::invalid(format!("factor matrix defines {} factors, volatility has {n}", f.n())));
    }
    Ok(f)
}

fn build(s: &Settings) -> Result<()> {
    let dt = s.dt()?;
    let horizon = to_steps(s.float("horizon")?.ok_or_else(|| Error::invalid("missing `horizon`"))?, dt, "horizon")?;
    if horizon == 0 {
        return Err(Error::invalid("horizon must be positive"));
    }
    let c = io::read_volmatrix(&s.path("volmatrix")?)?;
    let curve = io::read_curve(&s.path("curve")?, dt, horizon)?;
    let vol = interpolate(&c, dt, horizon)?;
    let f = factor_for(s, c.n(), dt)?;
    let tol = s.tol()?;
    let opts = ModelOptions { martingale_tol: Some(tol), max_nodes: s.max_nodes()?, lattice_horizon: s.parse("depth")? };
    let m = match s.get("drift").unwrap_or("arbitrage-free") {
        "arbitrage-free" => TermStructureModel::stationary(&f, &vol, curve, &opts)?,
        "csv" => TermStructureModel::assemble(&f, vol, curve, Dynamics::Stationary, &opts)?,
        other => return Err(Error::invalid(format!("drift source `{other}` must be `arbitrage-free` or `csv`"))),
    };
    let b = ModelBundle::from_model(&m, tol)?;
    eprintln!("martingale error {:e} (tolerance {tol:e}, depth {})", b.martingale_error, b.depth);
    s.emit(&b.to_json()?)
}

#[derive(Serialize)]
struct VerifyReport {
    tolerance: f64,
    max_error: f64,
    per_level: Vec<f64>,
    /// Risk-neutral one-step probabilities per step.
    kernels: Vec<Vec<f64>>,
    state_price_density: Option<noarb::NasReport>,
}

fn verify(s: &Settings) -> Result<()> {
    let tol = s.tol()?;
    let b = io::read_bundle(&s.path("bundle")?)?;
    let opts = ModelOptions { martingale_tol: None, max_nodes: s.max_nodes()?, lattice_horizon: Some(b.depth) };
    let vol = crate::volstruct::VolatilityTermStructure::with_mu(b.dt, b.sigma.clone(), b.mu.clone())?;
    let init = crate::model::ForwardCurve::new(0, b.dt, b.initial.clone())?;
    let m = TermStructureModel::assemble(&b.factor, vol, init, b.dynamics.clone(), &opts)?;
    let r = noarb::verify_martingale(&m)?;
    let kernels = (0..m.lattice().horizon()).map(|t| noarb::one_step_kernel(&m, t)).collect();
    let nas = match m.dynamics() {
        Dynamics::Stationary => Some(noarb::nas_equivalence_check(&m)?),
        _ => None,
    };
    let report = VerifyReport { tolerance: tol, max_error: r.max_error, per_level: r.per_level.clone(), kernels, state_price_density: nas };
    s.emit(&json(&report)?)?;
    if r.max_error > tol {
        return Err(Error::Arbitrage { max_error: r.max_error, tolerance: tol, per_level: r.per_level });
    }
    Ok(())
}

fn price(s: &Settings) -> Result<()> {
    let m = load_model(s)?;
    let node = node_of(s, &m)?;
    let cf = io::read_cashflows(&s.path("cashflows")?)?;
    let mut out = String::from("T,amount,discount,pv\n");
    let mut total = 0.0;
    for &(t, a) in &cf.legs {
        let p = sensitivity::present_value(&CashFlow::zero_coupon(t, 1.0)?, &m, node)?;
        total += a * p;
        out += &format!("{t},{a},{p},{}\n", a * p);
    }
    out += &format!("total,,,{total}\n");
    s.emit(&out)
}

fn sens(s: &Settings) -> Result<()> {
    let m = load_model(s)?;
    let node = node_of(s, &m)?;
    let cf = io::read_cashflows(&s.path("cashflows")?)?;
    s.emit(&json(&sensitivity::report(&cf, &m, node)?)?)
}

fn hedge(s: &Settings) -> Result<()> {
    let m = load_model(s)?;
    let node = node_of(s, &m)?;
    let target = io::read_cashflows(&s.path("target")?)?;
    let ins = io::read_instruments(&s.path("instruments")?)?;
    let mode = match s.get("mode").unwrap_or("delta") {
        "delta" => HedgeMode::Delta,
        "delta-gamma" => HedgeMode::DeltaGamma,
        other => return Err(Error::invalid(format!("mode `{other}` must be `delta` or `delta-gamma`"))),
    };
    let cfs: Vec<CashFlow> = ins.iter().map(|(_, c)| c.clone()).collect();
    let h = sensitivity::hedge(&target, &cfs, &m, node, mode)?;
    eprintln!("rank {} residual {:e}", h.rank, h.residual);
    let mut out = String::from("instrument,weight\n");
    for ((name, _), w) in ins.iter().zip(&h.weights) {
        out += &format!("{name},{w}\n");
    }
    s.emit(&out)
}

fn limit(s: &Settings) -> Result<()> {
    let dt0 = s.dt()?;
    let levels = s.parse::<usize>("levels")?.unwrap_or(4);
    let t = s.float("time")?.unwrap_or(1.0);
    to_steps(t, dt0, "time")?;
    let c = io::read_volmatrix(&s.path("volmatrix")?)?;
    let rho = PiecewiseLinearRho::from_coarse(&c)?;
    let n = c.n();
    let family = move |dt: f64| if n == 1 { FactorDistribution::binary_ho_lee(dt) } else { FactorDistribution::equal_weight(n, dt) };
    let mut out = String::from("T,T_next,dt,drift_err,mean_err,var_err\n");
    let mut left = 0.0;
    for &right in &c.tenors()[1..] {
        for r in convergence_test(&rho, family, left, right, t, dt0, levels)? {
            out += &format!("{left},{right},{},{},{},{}\n", r.dt, r.drift_err, r.mean_err, r.var_err);
        }
        left = right;
    }
    s.emit(&out)
}

fn simulate_cmd(s: &Settings) -> Result<()> {
    let m = load_model(s)?;
    let steps = s.parse::<usize>("steps")?.ok_or_else(|| Error::invalid("missing `steps`"))?;
    let seed = s.parse::<u64>("seed")?.unwrap_or(0);
    let h = simulate::simulate(&m, &s.tenors()?, steps, seed)?;
    s.emit(&io::format_history(&h))
}

/// Exit code for a failed command: 3 for I/O failures, 2 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_io() {
        3
    } else {
        2
    }
}
