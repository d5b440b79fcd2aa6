//! Deterministic probability-flow decoding.
//!
//! Decoding starts from the channel observation at the landing time `t*` and
//! integrates `dx/dt = v(x, t)` over `[t*, 1]` on a uniform grid of `N` steps
//! with either explicit Euler or the explicit midpoint rule.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, NoiseSchedule, Result};

/// A time-dependent velocity field `v(x, t)`.
pub trait VelocityField {
    /// State dimension the field accepts, or `None` if it acts coordinate-wise.
    fn dim(&self) -> Option<usize>;

    fn velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>>;
}

impl<T: VelocityField + ?Sized> VelocityField for &T {
    fn dim(&self) -> Option<usize> {
        (**self).dim()
    }

    fn velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        (**self).velocity(x, t)
    }
}

/// The zero field; transport is the identity.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroField;

impl VelocityField for ZeroField {
    fn dim(&self) -> Option<usize> {
        None
    }

    fn velocity(&self, x: &[f64], _t: f64) -> Result<Vec<f64>> {
        Ok(vec![0.0; x.len()])
    }
}

/// Adapts a closure into a [`VelocityField`].
pub struct FnField<F>(pub F);

impl<F> VelocityField for FnField<F>
where
    F: Fn(&[f64], f64) -> Vec<f64>,
{
    fn dim(&self) -> Option<usize> {
        None
    }

    fn velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        Ok((self.0)(x, t))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    Euler,
    #[default]
    Midpoint,
}

impl Solver {
    /// Field evaluations per step.
    pub fn evaluations_per_step(self) -> usize {
        match self {
            Solver::Euler => 1,
            Solver::Midpoint => 2,
        }
    }
}

impl fmt::Display for Solver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Solver::Euler => "euler",
            Solver::Midpoint => "midpoint",
        })
    }
}

impl FromStr for Solver {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "euler" => Ok(Solver::Euler),
            "midpoint" => Ok(Solver::Midpoint),
            other => Err(Error::Config(format!("unknown solver `{other}`"))),
        }
    }
}

pub const DEFAULT_STEPS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub solver: Solver,
    pub steps: usize,
    /// Landing time `t*`.
    pub t_start: f64,
    /// Clip the final state to `[0, 1]`.
    pub clamp_output: bool,
}

impl DecodeConfig {
    pub fn new(solver: Solver, steps: usize, t_start: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&t_start) {
            return Err(Error::Domain {
                what: "t_start",
                value: t_start,
                expected: "[0, 1)",
            });
        }
        Ok(DecodeConfig {
            solver,
            steps,
            t_start,
            clamp_output: false,
        })
    }

    pub fn with_clamp(mut self, clamp: bool) -> Self {
        self.clamp_output = clamp;
        self
    }
}

/// `N + 1` uniform grid points on `[t0, 1]`, last point exactly 1.
fn uniform_grid(t0: f64, steps: usize) -> Vec<f64> {
    let dt = (1.0 - t0) / steps as f64;
    (0..=steps)
        .map(|k| if k == steps { 1.0 } else { t0 + k as f64 * dt })
        .collect()
}

fn check_dim(field: &impl VelocityField, len: usize) -> Result<()> {
    match field.dim() {
        Some(d) if d != len => Err(Error::Shape(format!("field expects {d} coordinates, state has {len}"))),
        _ => Ok(()),
    }
}

fn check_finite(x: &[f64], step: usize) -> Result<()> {
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!(
            "state coordinate {i} became {} at step {step}",
            x[i]
        )));
    }
    Ok(())
}

/// Advance the coordinates selected by `active` from `t` to `t + h`.
fn step(
    field: &impl VelocityField,
    solver: Solver,
    x: &mut [f64],
    t: f64,
    h: f64,
    active: Option<&[bool]>,
) -> Result<()> {
    let is_active = |i: usize| active.is_none_or(|a| a[i]);
    let k1 = field.velocity(x, t)?;
    if k1.len() != x.len() {
        return Err(Error::Shape(format!(
            "field returned {} coordinates for a state of {}",
            k1.len(),
            x.len()
        )));
    }
    match solver {
        Solver::Euler => {
            for (i, xi) in x.iter_mut().enumerate() {
                if is_active(i) {
                    *xi += h * k1[i];
                }
            }
        }
        Solver::Midpoint => {
            let mid: Vec<f64> = x
                .iter()
                .enumerate()
                .map(|(i, &xi)| if is_active(i) { xi + 0.5 * h * k1[i] } else { xi })
                .collect();
            let k2 = field.velocity(&mid, t + 0.5 * h)?;
            for (i, xi) in x.iter_mut().enumerate() {
                if is_active(i) {
                    *xi += h * k2[i];
                }
            }
        }
    }
    Ok(())
}

fn clamp_unit(x: &mut [f64]) {
    for v in x {
        *v = v.clamp(0.0, 1.0);
    }
}

/// Integrate from `cfg.t_start` to 1 and return the state at `t = 1`.
pub fn integrate(field: &impl VelocityField, x0: &[f64], cfg: &DecodeConfig) -> Result<Vec<f64>> {
    DecodeConfig::new(cfg.solver, cfg.steps, cfg.t_start)?;
    check_dim(field, x0.len())?;
    let grid = uniform_grid(cfg.t_start, cfg.steps);
    let mut x = x0.to_vec();
    for (k, w) in grid.windows(2).enumerate() {
        step(field, cfg.solver, &mut x, w[0], w[1] - w[0], None)?;
        check_finite(&x, k)?;
    }
    if cfg.clamp_output {
        clamp_unit(&mut x);
    }
    Ok(x)
}

/// Integrate with per-coordinate landing times.
///
/// The clock starts at the earliest landing time and covers `[t_min, 1]` with
/// `steps` uniform steps, with every later landing time inserted as an extra
/// grid point. A coordinate stays frozen at its initial value until the clock
/// reaches its own landing time and evolves afterwards. Coordinates with a
/// landing time of 1 are never moved. When all landing times coincide this is
/// exactly [`integrate`].
pub fn integrate_staged(
    field: &impl VelocityField,
    x0: &[f64],
    t_starts: &[f64],
    solver: Solver,
    steps: usize,
    clamp_output: bool,
) -> Result<Vec<f64>> {
    if t_starts.len() != x0.len() {
        return Err(Error::Shape(format!(
            "{} landing times for a state of {}",
            t_starts.len(),
            x0.len()
        )));
    }
    if steps == 0 {
        return Err(Error::Config("steps must be at least 1".into()));
    }
    if let Some(&bad) = t_starts.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::Domain {
            what: "landing time",
            value: bad,
            expected: "[0, 1]",
        });
    }
    check_dim(field, x0.len())?;

    let mut x = x0.to_vec();
    let t_min = t_starts.iter().cloned().fold(f64::INFINITY, f64::min);
    if x.is_empty() || t_min >= 1.0 {
        if clamp_output {
            clamp_unit(&mut x);
        }
        return Ok(x);
    }

    let mut grid = uniform_grid(t_min, steps);
    for &t in t_starts {
        if t > t_min && t < 1.0 && !grid.contains(&t) {
            grid.push(t);
        }
    }
    grid.sort_by(|a, b| a.total_cmp(b));

    let mut active = vec![false; x.len()];
    for (k, w) in grid.windows(2).enumerate() {
        for (a, &ts) in active.iter_mut().zip(t_starts) {
            *a = ts <= w[0];
        }
        step(field, solver, &mut x, w[0], w[1] - w[0], Some(&active))?;
        check_finite(&x, k)?;
    }
    if clamp_output {
        clamp_unit(&mut x);
    }
    Ok(x)
}

/// Land `y` at `t* = σ⁻¹(sigma_ch)` and transport it to `t = 1`.
pub fn decode_awgn(
    y: &[f64],
    sigma_ch: f64,
    sched: &NoiseSchedule,
    field: &impl VelocityField,
    solver: Solver,
    steps: usize,
) -> Result<Vec<f64>> {
    let t_star = sched.sigma_inv(sigma_ch)?;
    if t_star >= 1.0 {
        return Ok(y.to_vec());
    }
    integrate(field, y, &DecodeConfig::new(solver, steps, t_star)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceProfile {
    /// `(N, ‖x_N − x_ref‖)` pairs.
    pub points: Vec<(usize, f64)>,
    /// Least-squares slope of `ln error` against `ln N`.
    pub slope: f64,
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(usize, f64)]) -> f64 {
    let n = points.len() as f64;
    let (lx, ly): (Vec<f64>, Vec<f64>) = points.iter().map(|&(k, e)| ((k as f64).ln(), e.ln())).unzip();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Global error of the chosen solver for each `N`, with the fitted order.
///
/// Without a `reference`, a midpoint run at ten times the largest `N` is used.
pub fn convergence_profile(
    field: &impl VelocityField,
    x0: &[f64],
    t_start: f64,
    solver: Solver,
    n_list: &[usize],
    reference: Option<&[f64]>,
) -> Result<ConvergenceProfile> {
    if n_list.len() < 2 {
        return Err(Error::Config("need at least two step counts".into()));
    }
    let reference = match reference {
        Some(r) => r.to_vec(),
        None => {
            let n_max = n_list.iter().copied().max().unwrap_or(1);
            integrate(field, x0, &DecodeConfig::new(Solver::Midpoint, 10 * n_max, t_start)?)?
        }
    };
    let mut points = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let x = integrate(field, x0, &DecodeConfig::new(solver, n, t_start)?)?;
        let err = x
            .iter()
            .zip(&reference)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        points.push((n, err));
    }
    let slope = loglog_slope(&points);
    Ok(ConvergenceProfile { points, slope })
}
