//! Noise schedule `σ(t)` on the flow time axis.
//!
//! Time runs from the prior end `t = 0` (noise std `sigma_max`) to the clean
//! end `t = 1` (no noise). The inverse map turns a channel noise level into a
//! landing time.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    /// `σ(t) = sigma_max · (1 − t)`.
    #[default]
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub kind: ScheduleKind,
    pub sigma_max: f64,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        NoiseSchedule::linear(1.0)
    }
}

fn check_time(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::Domain {
            what: "t",
            value: t,
            expected: "[0, 1]",
        })
    }
}

impl NoiseSchedule {
    /// Linear schedule. Panics if `sigma_max` is not a positive finite number.
    pub fn linear(sigma_max: f64) -> Self {
        Self::try_linear(sigma_max).expect("sigma_max must be positive and finite")
    }

    pub fn try_linear(sigma_max: f64) -> Result<Self> {
        if !(sigma_max.is_finite() && sigma_max > 0.0) {
            return Err(Error::Domain {
                what: "sigma_max",
                value: sigma_max,
                expected: "(0, inf)",
            });
        }
        Ok(NoiseSchedule {
            kind: ScheduleKind::Linear,
            sigma_max,
        })
    }

    pub fn sigma(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        Ok(match self.kind {
            ScheduleKind::Linear => self.sigma_max * (1.0 - t),
        })
    }

    pub fn sigma_dot(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        Ok(match self.kind {
            ScheduleKind::Linear => -self.sigma_max,
        })
    }

    /// Landing time `t*` with `σ(t*) = level`.
    pub fn sigma_inv(&self, level: f64) -> Result<f64> {
        if level.is_nan() || level < 0.0 {
            return Err(Error::Domain {
                what: "noise level",
                value: level,
                expected: "[0, sigma_max]",
            });
        }
        if level > self.sigma_max {
            return Err(Error::Calibration {
                level,
                sigma_max: self.sigma_max,
                context: String::new(),
            });
        }
        Ok(match self.kind {
            ScheduleKind::Linear => 1.0 - level / self.sigma_max,
        })
    }

    /// Landing time on the reversed axis (`t = 0` clean, `t = 1` noise).
    pub fn sigma_inv_reversed(&self, level: f64) -> Result<f64> {
        self.sigma_inv(level).map(|t| 1.0 - t)
    }
}
