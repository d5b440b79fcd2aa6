//! End-to-end transmission: source → channel → front-end → ODE decoding → metrics.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::channel::{
    awgn, awgn_sigma, channel_uses, complex_sigma, decode_report, draw_mimo_channels, mimo_equalize, mmse_lambda,
    pack_complex, rayleigh_equalize, symbol_power, FadingOptions,
};
use crate::metrics::{mse, psnr, psnr_gain, DELTA_PSNR_CAP_DB};
use crate::ode_decoder::integrate;
use crate::rng::{tags, Stream};
use crate::{DecodeConfig, Error, NoiseSchedule, Result, Solver, VelocityField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelKind {
    Awgn,
    Rayleigh,
    Mimo,
}

impl ChannelKind {
    pub const ALL: [ChannelKind; 3] = [ChannelKind::Awgn, ChannelKind::Rayleigh, ChannelKind::Mimo];
}

impl fmt::Display for ChannelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChannelKind::Awgn => "awgn",
            ChannelKind::Rayleigh => "rayleigh",
            ChannelKind::Mimo => "mimo",
        })
    }
}

impl FromStr for ChannelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "awgn" => Ok(ChannelKind::Awgn),
            "rayleigh" => Ok(ChannelKind::Rayleigh),
            "mimo" => Ok(ChannelKind::Mimo),
            other => Err(Error::Parse(format!(
                "unknown channel {other:?} (awgn, rayleigh, mimo)"
            ))),
        }
    }
}

/// One operating point.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkConfig {
    pub channel: ChannelKind,
    pub snr_db: f64,
    /// RMS of the real source signal; sets the noise level for a given SNR.
    pub signal_rms: f64,
    pub schedule: NoiseSchedule,
    pub solver: Solver,
    pub steps: usize,
    /// Clip decoded values to `[0, 1]`.
    pub clamp: bool,
    pub peak: f64,
    /// `(N_r, N_t)` for MIMO.
    pub mimo: (usize, usize),
    pub fading: FadingOptions,
    pub seed: u64,
}

impl LinkConfig {
    pub fn new(channel: ChannelKind, snr_db: f64, signal_rms: f64) -> Self {
        LinkConfig {
            channel,
            snr_db,
            signal_rms,
            schedule: NoiseSchedule::default(),
            solver: Solver::Midpoint,
            steps: crate::ode_decoder::DEFAULT_STEPS,
            clamp: false,
            peak: 1.0,
            mimo: (2, 2),
            fading: FadingOptions::default(),
            seed: 0,
        }
    }
}

/// Outcome for one message.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageOutcome {
    pub decoded: Vec<f64>,
    /// Raw AWGN output, or the equalized observation mapped to the source domain.
    pub received: Vec<f64>,
    pub mse: f64,
    pub psnr_db: f64,
    pub received_psnr_db: f64,
}

/// Send `x` as message number `index` and decode it.
///
/// Channel randomness comes from a substream keyed by `(seed, SNR slot, index)`,
/// so results do not depend on evaluation order.
pub fn transmit(field: &impl VelocityField, x: &[f64], cfg: &LinkConfig, index: u64) -> Result<MessageOutcome> {
    let slot = (cfg.snr_db * 1000.0).round() as i64 as u64;
    let tag = match cfg.channel {
        ChannelKind::Awgn => tags::CHANNEL,
        ChannelKind::Rayleigh | ChannelKind::Mimo => tags::FADING,
    };
    let mut rng = Stream::substream(cfg.seed ^ slot.wrapping_mul(0x9E37_79B9_7F4A_7C15), tag, index);
    let (decoded, received) = match cfg.channel {
        ChannelKind::Awgn => {
            let sigma = awgn_sigma(cfg.signal_rms, cfg.snr_db);
            let y = awgn(x, sigma, &mut rng);
            let t_star = cfg.schedule.sigma_inv(sigma)?;
            let decoded = if t_star >= 1.0 {
                let mut y = y.clone();
                if cfg.clamp {
                    y.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
                }
                y
            } else {
                integrate(
                    field,
                    &y,
                    &DecodeConfig::new(cfg.solver, cfg.steps, t_star)?.with_clamp(cfg.clamp),
                )?
            };
            (decoded, y)
        }
        ChannelKind::Rayleigh | ChannelKind::Mimo => {
            let sigma = complex_sigma(cfg.signal_rms, cfg.snr_db);
            let lambda = mmse_lambda(sigma, symbol_power(cfg.signal_rms))?;
            let z = pack_complex(x);
            let mut report = if cfg.channel == ChannelKind::Mimo {
                let (nr, nt) = cfg.mimo;
                let hs = draw_mimo_channels(nr, nt, channel_uses(z.len(), nt), cfg.fading.fast_fading, &mut rng);
                mimo_equalize(&z, &hs, sigma, lambda, &cfg.schedule, cfg.fading.debias, &mut rng)?
            } else {
                rayleigh_equalize(&z, sigma, lambda, &cfg.schedule, cfg.fading, &mut rng)?
            };
            report.original_len = x.len();
            let received = report.landing_point()?;
            (
                decode_report(&report, field, cfg.solver, cfg.steps, cfg.clamp)?,
                received,
            )
        }
    };
    Ok(MessageOutcome {
        mse: mse(x, &decoded)?,
        psnr_db: psnr(x, &decoded, cfg.peak)?,
        received_psnr_db: psnr(x, &received, cfg.peak)?,
        decoded,
        received,
    })
}

/// Means over messages at one operating point.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub channel: ChannelKind,
    pub snr_db: f64,
    pub messages: usize,
    pub mse: f64,
    pub psnr_db: f64,
    pub received_psnr_db: f64,
    /// Mean decoded PSNR minus mean received PSNR, capped.
    pub delta_psnr_db: f64,
}

/// Send `messages` messages, cycling through `samples`, and average.
pub fn evaluate<S: AsRef<[f64]>>(
    field: &impl VelocityField,
    samples: &[S],
    messages: usize,
    cfg: &LinkConfig,
) -> Result<SweepPoint> {
    if samples.is_empty() || messages == 0 {
        return Err(Error::Config("need at least one sample and one message".into()));
    }
    let (mut m, mut p, mut r) = (0.0, 0.0, 0.0);
    for i in 0..messages {
        let out = transmit(field, samples[i % samples.len()].as_ref(), cfg, i as u64)?;
        m += out.mse;
        p += out.psnr_db;
        r += out.received_psnr_db;
    }
    let n = messages as f64;
    let (psnr_db, received_psnr_db) = (p / n, r / n);
    Ok(SweepPoint {
        channel: cfg.channel,
        snr_db: cfg.snr_db,
        messages,
        mse: m / n,
        psnr_db,
        received_psnr_db,
        delta_psnr_db: psnr_gain(psnr_db, received_psnr_db, DELTA_PSNR_CAP_DB),
    })
}
