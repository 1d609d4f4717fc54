//! Detection hazards, cumulative hazards and survival.
//!
//! After a detection at trap `z*` at time `t*` the hazard at location `z` is a
//! Gaussian bump whose centre drifts from `z*` back to the activity centre
//! `s` and whose variance grows back to `sigma2`, both at rate `beta`:
//!
//! ```text
//! mu(t)    = e^{-beta dt} z* + (1 - e^{-beta dt}) s
//! var(t)   = sigma2 (1 - e^{-2 beta dt})
//! h(z, t)  = h0 exp(-|z - mu(t)|^2 / (2 var(t)))
//! ```
//!
//! Before any detection, and for the SCR model at all times, the hazard is the
//! half-normal `h0 exp(-|z - s|^2 / (2 sigma2))`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point, TrapArray};

/// Relative floor applied to the OU variance as `dt -> 0`.
pub const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "MSCR")]
    Mscr,
    #[serde(rename = "SCR")]
    Scr,
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Mscr => "MSCR",
            ModelKind::Scr => "SCR",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "MSCR" => Ok(ModelKind::Mscr),
            "SCR" => Ok(ModelKind::Scr),
            _ => Err(Error::config(format!("unknown model kind {s:?} (expected MSCR or SCR)"))),
        }
    }
}

/// Hazard parameters. `beta` is carried but ignored for SCR.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Peak detection rate per trap, per day.
    pub h0: f64,
    /// Spatial scale, km^2.
    pub sigma2: f64,
    /// Reversion rate towards the activity centre, per day.
    #[serde(with = "finite_or_null")]
    pub beta: f64,
    pub kind: ModelKind,
}

/// Writes infinite `beta` (SCR) as `null` so JSON round-trips.
mod finite_or_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

impl ModelParams {
    pub fn mscr(h0: f64, sigma2: f64, beta: f64) -> Self {
        ModelParams { h0, sigma2, beta, kind: ModelKind::Mscr }
    }

    pub fn scr(h0: f64, sigma2: f64) -> Self {
        ModelParams { h0, sigma2, beta: f64::INFINITY, kind: ModelKind::Scr }
    }

    /// Strict validity for likelihood evaluation.
    pub fn validate(&self) -> Result<()> {
        if !(self.h0 > 0.0 && self.h0.is_finite()) {
            return Err(Error::domain(format!("h0 must be positive and finite, got {}", self.h0)));
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::domain(format!("sigma2 must be positive and finite, got {}", self.sigma2)));
        }
        if self.kind == ModelKind::Mscr && !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::domain(format!("beta must be positive and finite, got {}", self.beta)));
        }
        Ok(())
    }

    /// True when the hazard ignores memory.
    pub fn is_memoryless(&self) -> bool {
        self.kind == ModelKind::Scr
    }
}

/// Location and time of the most recent detection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryState {
    pub location: Point,
    pub time: f64,
}

impl MemoryState {
    pub fn new(location: Point, time: f64) -> Self {
        MemoryState { location, time }
    }
}

/// Equal-width partition of `[tau0, tau1]` evaluated at interval midpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    bounds: Vec<f64>,
}

impl TimeGrid {
    pub fn new(tau0: f64, tau1: f64, intervals: usize) -> Result<Self> {
        if !(tau0.is_finite() && tau1.is_finite()) || tau1 < tau0 {
            return Err(Error::config(format!("invalid time interval [{tau0}, {tau1}]")));
        }
        if intervals == 0 {
            return Err(Error::config("time grid needs at least one interval"));
        }
        let width = (tau1 - tau0) / intervals as f64;
        let mut bounds: Vec<f64> = (0..intervals).map(|b| tau0 + b as f64 * width).collect();
        bounds.push(tau1);
        Ok(TimeGrid { bounds })
    }

    /// Partition of `[tau0, tau1]` into intervals no wider than `t_end / b`.
    pub fn for_interval(tau0: f64, tau1: f64, t_end: f64, b: usize) -> Result<Self> {
        TimeGrid::new(tau0, tau1, intervals_for(tau1 - tau0, t_end, b))
    }

    pub fn start(&self) -> f64 {
        self.bounds[0]
    }

    pub fn end(&self) -> f64 {
        self.bounds[self.bounds.len() - 1]
    }

    pub fn bounds(&self) -> &[f64] {
        &self.bounds
    }

    pub fn len(&self) -> usize {
        self.bounds.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(midpoint, width)` for every interval.
    pub fn cells(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.bounds.windows(2).map(|w| (0.5 * (w[0] + w[1]), w[1] - w[0]))
    }
}

/// Number of sub-intervals for an interval of length `len` when the whole
/// survey `[0, t_end]` is split into `b` pieces.
pub fn intervals_for(len: f64, t_end: f64, b: usize) -> usize {
    let raw = len * b as f64 / t_end;
    (raw - 1e-9).ceil().max(1.0) as usize
}

fn check_finite(values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::domain("non-finite input to hazard evaluation"))
    }
}

/// Mean of the hazard kernel: a convex combination of the last detection
/// location and the activity centre.
pub fn ou_mean(s: Point, mem: &MemoryState, t: f64, beta: f64) -> Result<Point> {
    check_finite(&[s.x, s.y, t, beta, mem.time, mem.location.x, mem.location.y])?;
    let dt = t - mem.time;
    if dt <= 0.0 {
        return Err(Error::domain(format!("time {t} does not follow the last detection at {}", mem.time)));
    }
    let a = (-beta * dt).exp();
    Ok(Point::new(
        a * mem.location.x + (1.0 - a) * s.x,
        a * mem.location.y + (1.0 - a) * s.y,
    ))
}

/// Per-axis variance of the hazard kernel `dt` days after a detection.
pub fn ou_variance(sigma2: f64, beta: f64, dt: f64) -> Result<f64> {
    check_finite(&[sigma2, beta, dt])?;
    if dt <= 0.0 {
        return Err(Error::domain(format!("elapsed time must be positive, got {dt}")));
    }
    Ok(ou_variance_unchecked(sigma2, beta, dt))
}

#[inline]
pub(crate) fn ou_variance_unchecked(sigma2: f64, beta: f64, dt: f64) -> f64 {
    (-sigma2 * (-2.0 * beta * dt).exp_m1()).max(sigma2 * VARIANCE_FLOOR)
}

/// Half-normal (limiting) hazard at `z` for activity centre `s`.
#[inline]
pub fn half_normal(z: Point, s: Point, h0: f64, sigma2: f64) -> f64 {
    h0 * (-z.dist2(&s) / (2.0 * sigma2)).exp()
}

/// Hazard at location `z` and time `t`.
///
/// Falls back to the half-normal when the model is SCR or no detection has
/// happened yet.
pub fn hazard(z: Point, t: f64, s: Point, mem: Option<&MemoryState>, params: &ModelParams) -> Result<f64> {
    check_finite(&[z.x, z.y, t, s.x, s.y, params.h0, params.sigma2])?;
    match mem {
        Some(m) if !params.is_memoryless() => {
            let mu = ou_mean(s, m, t, params.beta)?;
            let var = ou_variance_unchecked(params.sigma2, params.beta, t - m.time);
            Ok(params.h0 * (-z.dist2(&mu) / (2.0 * var)).exp())
        }
        _ => Ok(half_normal(z, s, params.h0, params.sigma2)),
    }
}

/// Sum of the hazard over all traps.
pub fn cumulative_hazard(
    t: f64,
    s: Point,
    mem: Option<&MemoryState>,
    params: &ModelParams,
    traps: &TrapArray,
) -> Result<f64> {
    let mut total = 0.0;
    for z in traps.locations() {
        total += hazard(z, t, s, mem, params)?;
    }
    Ok(total)
}

/// Sum of the half-normal hazard over all traps.
pub fn cumulative_limiting_hazard(s: Point, params: &ModelParams, traps: &TrapArray) -> f64 {
    traps
        .locations()
        .map(|z| half_normal(z, s, params.h0, params.sigma2))
        .sum()
}

/// Log of [`hazard`], exact even where the hazard itself underflows.
pub fn log_hazard(z: Point, t: f64, s: Point, mem: Option<&MemoryState>, params: &ModelParams) -> Result<f64> {
    check_finite(&[z.x, z.y, t, s.x, s.y, params.h0, params.sigma2])?;
    match mem {
        Some(m) if !params.is_memoryless() => {
            let mu = ou_mean(s, m, t, params.beta)?;
            let var = ou_variance_unchecked(params.sigma2, params.beta, t - m.time);
            Ok(params.h0.ln() - z.dist2(&mu) / (2.0 * var))
        }
        _ => Ok(params.h0.ln() - z.dist2(&s) / (2.0 * params.sigma2)),
    }
}

/// Probability of no detection at any trap during `[tau0, tau1]`.
///
/// Memory-dependent hazards are integrated with the midpoint rule on `grid`;
/// time-constant hazards use the exact closed form.
pub fn survival(
    tau0: f64,
    tau1: f64,
    s: Point,
    mem: Option<&MemoryState>,
    params: &ModelParams,
    traps: &TrapArray,
    grid: &TimeGrid,
) -> Result<f64> {
    log_survival(tau0, tau1, s, mem, params, traps, grid).map(f64::exp)
}

/// Log of [`survival`]: minus the integrated cumulative hazard.
pub fn log_survival(
    tau0: f64,
    tau1: f64,
    s: Point,
    mem: Option<&MemoryState>,
    params: &ModelParams,
    traps: &TrapArray,
    grid: &TimeGrid,
) -> Result<f64> {
    if tau1 < tau0 {
        return Err(Error::domain(format!("survival interval reversed: [{tau0}, {tau1}]")));
    }
    let tol = 1e-12 * tau0.abs().max(tau1.abs()).max(1.0);
    if (grid.start() - tau0).abs() > tol || (grid.end() - tau1).abs() > tol {
        return Err(Error::config(format!(
            "time grid [{}, {}] does not span [{tau0}, {tau1}]",
            grid.start(),
            grid.end()
        )));
    }
    if tau0 == tau1 {
        return Ok(0.0);
    }
    match mem {
        Some(m) if !params.is_memoryless() => {
            if tau0 < m.time {
                return Err(Error::domain("survival interval starts before the last detection"));
            }
            let mut integral = 0.0;
            for (eta, width) in grid.cells() {
                integral += cumulative_hazard(eta, s, mem, params, traps)? * width;
            }
            Ok(-integral)
        }
        _ => Ok(-(tau1 - tau0) * cumulative_limiting_hazard(s, params, traps)),
    }
}
