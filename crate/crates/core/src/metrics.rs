//! Reconstruction quality: MSE, PSNR and the PSNR gain over the raw channel output.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// ΔPSNR values are reported within `±DELTA_PSNR_CAP_DB`.
pub const DELTA_PSNR_CAP_DB: f64 = 99.0;

pub fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("lengths {} and {} differ", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::Shape("empty vectors".into()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
}

/// PSNR from an MSE; `+∞` when the MSE is zero.
pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

pub fn psnr(a: &[f64], b: &[f64], peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(Error::Domain {
            what: "peak",
            value: peak,
            expected: "(0, inf)",
        });
    }
    Ok(psnr_from_mse(mse(a, b)?, peak))
}

/// Difference of two PSNR values with infinities resolved and the result capped.
pub fn psnr_gain(decoded_db: f64, received_db: f64, cap: f64) -> f64 {
    let d = match (decoded_db.is_infinite(), received_db.is_infinite()) {
        (true, true) => 0.0,
        _ => decoded_db - received_db,
    };
    d.clamp(-cap, cap)
}

/// `psnr(clean, decoded) − psnr(clean, received)`, capped at ±99 dB.
pub fn delta_psnr(clean: &[f64], decoded: &[f64], received: &[f64], peak: f64) -> Result<f64> {
    Ok(psnr_gain(
        psnr(clean, decoded, peak)?,
        psnr(clean, received, peak)?,
        DELTA_PSNR_CAP_DB,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mse: f64,
    pub psnr_db: f64,
    pub delta_psnr_db: f64,
    pub peak: f64,
}

impl MetricReport {
    pub fn evaluate(clean: &[f64], decoded: &[f64], received: &[f64], peak: f64) -> Result<Self> {
        let mse = mse(clean, decoded)?;
        Ok(MetricReport {
            mse,
            psnr_db: psnr(clean, decoded, peak)?,
            delta_psnr_db: delta_psnr(clean, decoded, received, peak)?,
            peak,
        })
    }
}

/// Text form used in CSV output; infinities become `inf` / `-inf`.
pub fn format_db(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v}")
    }
}
