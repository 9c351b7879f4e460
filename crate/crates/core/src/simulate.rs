//! Synthetic bucket-forward histories sampled under the real-world
//! probabilities.
//!
//! Bucket forwards are observed at fixed maturities. Since the stationary
//! model's increments do not depend on the observation time, a path can run
//! past the model horizon:
//! `F_t(T_i, T_{i+1}) = F_0(T_i, T_{i+1}) + ⟨σ_i, w_t⟩ + t·μ_i` with the
//! bucket averages σ_i, μ_i.

use chrono::{Days, NaiveDate};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::to_steps;
use crate::io::History;
use crate::lattice::sample_outcomes;
use crate::model::{Dynamics, TermStructureModel};
use crate::volstruct::coarsen;

/// Observation date of step `k`.
pub fn step_date(k: usize, dt: f64) -> NaiveDate {
    let start = NaiveDate::from_ymd_opt(2000, 1, 1).unwrap();
    start + Days::new((k as f64 * dt * 365.25).round() as u64)
}

/// `steps + 1` observations of the buckets ending at `right_ends` (the first
/// bucket starts at 0).
pub fn simulate(m: &TermStructureModel, right_ends: &[f64], steps: usize, seed: u64) -> Result<History> {
    if m.dynamics() != &Dynamics::Stationary {
        return Err(Error::invalid("simulation needs a stationary model"));
    }
    if right_ends.is_empty() {
        return Err(Error::invalid("need at least one bucket"));
    }
    let mut tenors = vec![0.0];
    tenors.extend_from_slice(right_ends);
    let c = coarsen(m.vol(), &tenors)?;
    let dt = m.dt();
    let init: Vec<f64> = c
        .tenors()
        .windows(2)
        .map(|w| {
            let a = to_steps(w[0], dt, "tenor")?;
            let b = to_steps(w[1], dt, "tenor")?;
            Ok((a..b).map(|k| m.initial().at(k)).sum::<f64>() / (b - a) as f64)
        })
        .collect::<Result<_>>()?;
    let f = m.factor();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let path = sample_outcomes(f, steps, &mut rng);
    let mut w = vec![0.0; f.n()];
    let mut dates = Vec::with_capacity(steps + 1);
    let mut levels = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        if k > 0 {
            for (wj, x) in w.iter_mut().zip(f.outcome(path[k - 1])) {
                *wj += x;
            }
        }
        let t = k as f64 * dt;
        dates.push(step_date(k, dt));
        levels.push(
            init.iter()
                .zip(c.sigma())
                .zip(c.mu())
                .map(|((f0, s), mu)| f0 + s.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + t * mu)
                .collect(),
        );
    }
    Ok(History { dates, levels })
}
