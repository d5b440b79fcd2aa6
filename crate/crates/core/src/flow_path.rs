//! AWGN-compatible conditional Gaussian path and its generating velocity.
//!
//! Conditioned on a clean sample `x1`, the path is `X_t = x1 + σ(t)·ε` with
//! `ε ~ N(0, I)`: the mean stays at `x1` and the noise shrinks to zero at
//! `t = 1`, exactly mirroring an AWGN observation of `x1`.

use crate::data_io::GmmComponent;
use crate::rng::Stream;
use crate::{Error, NoiseSchedule, Result};

/// One draw from the conditional path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSample {
    pub x_t: Vec<f64>,
    pub x1: Vec<f64>,
    pub eps: Vec<f64>,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherVelocity {
    pub u: Vec<f64>,
}

/// Build the path state from an explicit noise draw.
pub fn path_point(x1: &[f64], eps: &[f64], t: f64, sched: &NoiseSchedule) -> Result<PathSample> {
    if x1.len() != eps.len() {
        return Err(Error::Shape(format!(
            "x1 has {} entries, eps has {}",
            x1.len(),
            eps.len()
        )));
    }
    let sigma = sched.sigma(t)?;
    let x_t = x1.iter().zip(eps).map(|(a, e)| a + sigma * e).collect();
    Ok(PathSample {
        x_t,
        x1: x1.to_vec(),
        eps: eps.to_vec(),
        t,
    })
}

/// Draw `ε ~ N(0, I)` from `rng` and place `x1` on the path at time `t`.
pub fn sample_path(x1: &[f64], t: f64, sched: &NoiseSchedule, rng: &mut Stream) -> Result<PathSample> {
    sched.sigma(t)?;
    let eps = rng.normal_vec(x1.len());
    path_point(x1, &eps, t, sched)
}

/// Conditional velocity `u_t(x | x1)`, evaluated as `σ̇(t)·ε`.
///
/// On the path `x_t − x1 = σ(t)·ε`, so this equals `(σ̇/σ)(x_t − x1)` wherever
/// `σ(t) > 0` and stays finite at `t = 1`.
pub fn teacher_velocity(sample: &PathSample, sched: &NoiseSchedule) -> Result<TeacherVelocity> {
    let sigma_dot = sched.sigma_dot(sample.t)?;
    Ok(TeacherVelocity {
        u: sample.eps.iter().map(|e| sigma_dot * e).collect(),
    })
}

/// Ratio form `(σ̇/σ)(x − x1)` of the conditional velocity; undefined at `σ = 0`.
pub fn teacher_velocity_ratio(x: &[f64], x1: &[f64], t: f64, sched: &NoiseSchedule) -> Result<Vec<f64>> {
    let sigma = sched.sigma(t)?;
    if sigma <= 0.0 {
        return Err(Error::Domain {
            what: "sigma(t)",
            value: sigma,
            expected: "(0, sigma_max]",
        });
    }
    let k = sched.sigma_dot(t)? / sigma;
    Ok(x.iter().zip(x1).map(|(a, b)| k * (a - b)).collect())
}

/// Conditional density `p_t(x | x1) = N(x; x1, σ(t)² I)`.
pub fn conditional_density(x: &[f64], x1: &[f64], t: f64, sched: &NoiseSchedule) -> Result<f64> {
    if x.len() != x1.len() {
        return Err(Error::Shape(format!("x has {} entries, x1 has {}", x.len(), x1.len())));
    }
    let sigma = sched.sigma(t)?;
    if sigma <= 0.0 {
        return Err(Error::Domain {
            what: "sigma(t)",
            value: sigma,
            expected: "(0, sigma_max]",
        });
    }
    let d = x.len() as f64;
    let r2: f64 = x.iter().zip(x1).map(|(a, b)| (a - b) * (a - b)).sum();
    let var = sigma * sigma;
    Ok((std::f64::consts::TAU * var).powf(-0.5 * d) * (-0.5 * r2 / var).exp())
}

/// `|∂_t p + ∇·(p u)|` at `(x, t)` for the conditional pair.
///
/// The time derivative is a central difference with step `h`; the divergence
/// uses the closed form `(σ̇/σ)(d − ‖x − x1‖²/σ²)·p`. The exact residual is
/// zero, so the returned value is the O(h²) truncation error of the
/// difference quotient.
pub fn continuity_residual(x: &[f64], t: f64, x1: &[f64], sched: &NoiseSchedule, h: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::Domain {
            what: "h",
            value: h,
            expected: "(0, inf)",
        });
    }
    if !(t - h > 0.0 && t + h < 1.0) {
        return Err(Error::Domain {
            what: "t",
            value: t,
            expected: "(h, 1 - h)",
        });
    }
    for probe in [t - h, t + h] {
        let s = sched.sigma(probe)?;
        if s <= 0.0 {
            return Err(Error::Domain {
                what: "sigma(t ± h)",
                value: s,
                expected: "(0, sigma_max]",
            });
        }
    }
    let dp_dt = (conditional_density(x, x1, t + h, sched)? - conditional_density(x, x1, t - h, sched)?) / (2.0 * h);

    let sigma = sched.sigma(t)?;
    let sigma_dot = sched.sigma_dot(t)?;
    let d = x.len() as f64;
    let r2: f64 = x.iter().zip(x1).map(|(a, b)| (a - b) * (a - b)).sum();
    let p = conditional_density(x, x1, t, sched)?;
    let div = sigma_dot / sigma * (d - r2 / (sigma * sigma)) * p;
    Ok((dp_dt + div).abs())
}

/// Exact marginal velocity when the source is `N(mu0, sigma0² I)`:
/// `σσ̇ / (sigma0² + σ²) · (x − mu0)`.
pub fn marginal_field_gaussian(x: &[f64], t: f64, mu0: &[f64], sigma0: f64, sched: &NoiseSchedule) -> Result<Vec<f64>> {
    if x.len() != mu0.len() {
        return Err(Error::Shape(format!(
            "x has {} entries, mu0 has {}",
            x.len(),
            mu0.len()
        )));
    }
    let sigma = sched.sigma(t)?;
    let k = sigma * sched.sigma_dot(t)? / (sigma0 * sigma0 + sigma * sigma);
    Ok(x.iter().zip(mu0).map(|(a, m)| k * (a - m)).collect())
}

/// Exact marginal velocity for an isotropic Gaussian-mixture source: the
/// responsibility-weighted sum of the per-component Gaussian fields.
pub fn marginal_field_gmm(x: &[f64], t: f64, components: &[GmmComponent], sched: &NoiseSchedule) -> Result<Vec<f64>> {
    if components.is_empty() {
        return Err(Error::Config("mixture needs at least one component".into()));
    }
    if let Some(c) = components.iter().find(|c| c.mean.len() != x.len()) {
        return Err(Error::Shape(format!(
            "x has {} entries, component mean has {}",
            x.len(),
            c.mean.len()
        )));
    }
    let sigma = sched.sigma(t)?;
    let sigma_dot = sched.sigma_dot(t)?;
    let d = x.len() as f64;
    let mut logits = Vec::with_capacity(components.len());
    for c in components {
        let v = c.std * c.std + sigma * sigma;
        if !(v > 0.0) {
            return Err(Error::Domain {
                what: "component variance at t",
                value: v,
                expected: "(0, inf)",
            });
        }
        let r2: f64 = x.iter().zip(&c.mean).map(|(a, m)| (a - m) * (a - m)).sum();
        logits.push(c.weight.ln() - 0.5 * d * v.ln() - 0.5 * r2 / v);
    }
    let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = vec![0.0; x.len()];
    for (c, w) in components.iter().zip(&weights) {
        let k = w / total * sigma * sigma_dot / (c.std * c.std + sigma * sigma);
        for ((ui, xi), m) in u.iter_mut().zip(x).zip(&c.mean) {
            *ui += k * (xi - m);
        }
    }
    Ok(u)
}
