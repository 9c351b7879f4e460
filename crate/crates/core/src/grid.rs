//! Conversions between calendar times (years) and lattice step indices.

use crate::error::{Error, Result};

/// Snapping tolerance, measured in steps.
const STEP_TOL: f64 = 1e-7;

/// Converts a nonnegative time in years to a step index on the `dt` grid.
pub fn to_steps(value: f64, dt: f64, what: &str) -> Result<usize> {
    if !value.is_finite() || value < -STEP_TOL * dt {
        return Err(Error::invalid(format!("{what} = {value} must be a finite nonnegative time")));
    }
    let x = value / dt;
    let k = x.round();
    if (x - k).abs() > STEP_TOL * x.abs().max(1.0) {
        return Err(Error::OffGrid { what: what.to_string(), value, dt });
    }
    Ok(k.max(0.0) as usize)
}

pub fn check_dt(dt: f64) -> Result<()> {
    if dt.is_finite() && dt > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("dt = {dt} must be strictly positive")))
    }
}
