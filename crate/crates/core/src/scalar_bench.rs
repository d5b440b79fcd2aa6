//! Closed-form scalar Gaussian benchmark.
//!
//! Source `X1 ~ N(0, σ_x²)`, observation `Y = X1 + σ_ch·ε`. The ideal flow
//! preserving `X_t ~ N(0, s²(t))`, `s² = σ_x² + σ(t)²`, has the linear field
//! `(ṡ/s)·x`, so LTT decoding from `σ(t*) = σ_ch` is a linear estimator that
//! can be compared with the MMSE estimator directly.

use serde::{Deserialize, Serialize};

use crate::{Error, NoiseSchedule, Result, VelocityField};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarModel {
    sigma_x: f64,
    sigma_ch: f64,
}

impl ScalarModel {
    pub fn new(sigma_x: f64, sigma_ch: f64) -> Result<Self> {
        if !(sigma_x.is_finite() && sigma_x > 0.0) {
            return Err(Error::Domain {
                what: "sigma_x",
                value: sigma_x,
                expected: "(0, inf)",
            });
        }
        if !(sigma_ch.is_finite() && sigma_ch >= 0.0) {
            return Err(Error::Domain {
                what: "sigma_ch",
                value: sigma_ch,
                expected: "[0, inf)",
            });
        }
        Ok(ScalarModel { sigma_x, sigma_ch })
    }

    pub fn sigma_x(&self) -> f64 {
        self.sigma_x
    }

    pub fn sigma_ch(&self) -> f64 {
        self.sigma_ch
    }

    fn total_var(&self) -> f64 {
        self.sigma_x * self.sigma_x + self.sigma_ch * self.sigma_ch
    }
}

/// `a_LTT = σ_x / √(σ_x² + σ_ch²)`.
pub fn ltt_gain(m: &ScalarModel) -> f64 {
    m.sigma_x / m.total_var().sqrt()
}

/// `a_MMSE = σ_x² / (σ_x² + σ_ch²)`.
pub fn mmse_gain(m: &ScalarModel) -> f64 {
    m.sigma_x * m.sigma_x / m.total_var()
}

/// MSE of the linear estimator `a·Y`.
pub fn mse_of_gain(m: &ScalarModel, a: f64) -> f64 {
    let sx2 = m.sigma_x * m.sigma_x;
    sx2 - 2.0 * a * sx2 + a * a * m.total_var()
}

/// `MSE_MMSE = σ_x² σ_ch² / (σ_x² + σ_ch²)`.
pub fn mmse_mse(m: &ScalarModel) -> f64 {
    m.sigma_x * m.sigma_x * m.sigma_ch * m.sigma_ch / m.total_var()
}

/// `MSE_LTT − MSE_MMSE = (σ_x² + σ_ch²)(a_LTT − a_MMSE)²`.
pub fn excess_mse(m: &ScalarModel) -> f64 {
    let gap = ltt_gain(m) - mmse_gain(m);
    m.total_var() * gap * gap
}

/// Leading small-noise term `σ_ch⁴ / (4σ_x²)` of [`excess_mse`].
pub fn excess_mse_asymptote(m: &ScalarModel) -> f64 {
    m.sigma_ch.powi(4) / (4.0 * m.sigma_x * m.sigma_x)
}

/// The `t = 1` value of the exact scalar flow started at `X_{t*} = y`.
pub fn exact_scalar_decode(y: f64, m: &ScalarModel, sched: &NoiseSchedule) -> Result<f64> {
    // Rejects channels noisier than the path.
    sched.sigma_inv(m.sigma_ch)?;
    Ok(y * ltt_gain(m))
}

/// `v_t(x) = σσ̇ / (σ_x² + σ²) · x`.
pub fn scalar_field(x: f64, t: f64, m: &ScalarModel, sched: &NoiseSchedule) -> Result<f64> {
    let sigma = sched.sigma(t)?;
    Ok(sigma * sched.sigma_dot(t)? / (m.sigma_x * m.sigma_x + sigma * sigma) * x)
}

/// The scalar field applied coordinate-wise, usable by the ODE decoder.
#[derive(Debug, Clone, Copy)]
pub struct ScalarField {
    pub model: ScalarModel,
    pub schedule: NoiseSchedule,
}

impl VelocityField for ScalarField {
    fn dim(&self) -> Option<usize> {
        None
    }

    fn velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        x.iter()
            .map(|&xi| scalar_field(xi, t, &self.model, &self.schedule))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow_path::marginal_field_gaussian;
    use crate::rng::Stream;

    fn m(sx: f64, sc: f64) -> ScalarModel {
        ScalarModel::new(sx, sc).unwrap()
    }

    #[test]
    fn gains() {
        assert_eq!(ltt_gain(&m(1.0, 0.0)), 1.0);
        assert!((ltt_gain(&m(1.0, 1.0)) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-5);
        assert_eq!(mmse_gain(&m(1.0, 0.0)), 1.0);
        assert_eq!(mmse_gain(&m(1.0, 1.0)), 0.5);
        assert!((mmse_gain(&m(1.0, 0.1)) - 0.990099).abs() < 1e-6);
    }

    #[test]
    fn mse_values() {
        let model = m(1.0, 1.0);
        assert!((mse_of_gain(&model, mmse_gain(&model)) - 0.5).abs() < 1e-15);
        assert_eq!(mse_of_gain(&model, 0.0), 1.0);
        assert_eq!(mse_of_gain(&m(2.5, 0.3), 0.0), 6.25);
        assert!((mse_of_gain(&model, ltt_gain(&model)) - 0.58579).abs() < 1e-5);
        assert!((mmse_mse(&model) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn excess_mse_examples() {
        assert_eq!(excess_mse(&m(1.0, 0.0)), 0.0);
        let e = excess_mse(&m(1.0, 0.1));
        assert!((e / 2.466e-5 - 1.0).abs() < 0.02, "{e}");
        let model = m(1.0, 0.01);
        let ratio = excess_mse(&model) / excess_mse_asymptote(&model);
        assert!((ratio - 1.0).abs() < 0.005, "{ratio}");
    }

    #[test]
    fn asymptotic_rate_improves_as_noise_vanishes() {
        let mut last = f64::INFINITY;
        for sc in [0.1, 0.05, 0.01] {
            let model = m(1.0, sc);
            let dev = (excess_mse(&model) / sc.powi(4) - 0.25).abs();
            assert!(dev < last);
            last = dev;
        }
    }

    #[test]
    fn mmse_is_the_argmin() {
        for (sx, sc) in [(1.0, 1.0), (0.5, 0.2), (3.0, 2.0)] {
            let model = m(sx, sc);
            let best = mse_of_gain(&model, mmse_gain(&model));
            for k in 0..=2000 {
                let a = -0.5 + 2.0 * k as f64 / 2000.0;
                assert!(mse_of_gain(&model, a) >= best - 1e-15);
            }
        }
    }

    #[test]
    fn ltt_never_beats_mmse() {
        for sc in [0.0, 1e-3, 0.1, 0.7, 2.0] {
            let model = m(1.3, sc);
            let gap = mse_of_gain(&model, ltt_gain(&model)) - mse_of_gain(&model, mmse_gain(&model));
            if sc == 0.0 {
                assert_eq!(gap, 0.0);
            } else {
                assert!(gap > 0.0);
            }
        }
    }

    #[test]
    fn exact_decode() {
        let s = NoiseSchedule::linear(1.0);
        assert_eq!(exact_scalar_decode(0.0, &m(1.0, 0.5), &s).unwrap(), 0.0);
        assert!((exact_scalar_decode(2.0, &m(1.0, 1.0), &s).unwrap() - std::f64::consts::SQRT_2).abs() < 1e-5);
        assert_eq!(
            exact_scalar_decode(1.0, &m(1.0, 0.3), &s).unwrap(),
            ltt_gain(&m(1.0, 0.3))
        );
        assert!(matches!(
            exact_scalar_decode(1.0, &m(1.0, 1.5), &s),
            Err(Error::Calibration { .. })
        ));
    }

    #[test]
    fn field_examples() {
        let s = NoiseSchedule::linear(1.0);
        let model = m(1.0, 0.3);
        assert_eq!(scalar_field(0.0, 0.2, &model, &s).unwrap(), 0.0);
        assert_eq!(scalar_field(3.0, 1.0, &model, &s).unwrap(), 0.0);
        assert!((scalar_field(1.0, 0.0, &model, &s).unwrap() + 0.5).abs() < 1e-15);
    }

    #[test]
    fn field_equals_gaussian_marginal() {
        let s = NoiseSchedule::linear(1.0);
        let mut rng = Stream::new(8, 0);
        for _ in 0..500 {
            let sx = 0.2 + 2.0 * rng.uniform();
            let x = 4.0 * rng.normal();
            let t = rng.uniform_closed();
            let a = scalar_field(x, t, &m(sx, 0.1), &s).unwrap();
            let b = marginal_field_gaussian(&[x], t, &[0.0], sx, &s).unwrap()[0];
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn rejects_invalid_models() {
        assert!(ScalarModel::new(0.0, 1.0).is_err());
        assert!(ScalarModel::new(1.0, -0.1).is_err());
        assert!(ScalarModel::new(1.0, 0.0).is_ok());
    }
}
