//! Channel simulators and the front-ends that reduce fading channels to an
//! AWGN-equivalent landing point.
//!
//! Complex symbols follow the `CN(0, 1)` convention: real and imaginary parts
//! of unit complex noise each have variance 1/2. A complex effective noise
//! level `σ_eff` therefore corresponds to a per-real-dimension level of
//! `σ_eff / √2`, and that is the level matched against the flow path when
//! computing a landing time (see [`landing_level`]).

mod svd;

use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub use svd::{complex_svd_2x2, jacobi_svd, svd, CMatrix, Svd};

use crate::ode_decoder::integrate_staged;
use crate::rng::Stream;
use crate::{Error, NoiseSchedule, Result, Solver, VelocityField};

/// Complex symbols; the memory layout is interleaved `[re0, im0, re1, im1, ...]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ComplexVec(pub Vec<Complex64>);

impl ComplexVec {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.0
    }

    pub fn to_interleaved(&self) -> Vec<f64> {
        self.0.iter().flat_map(|z| [z.re, z.im]).collect()
    }

    pub fn energy(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum()
    }
}

/// Pair consecutive reals into complex symbols, zero-padding an odd tail.
pub fn pack_complex(x: &[f64]) -> ComplexVec {
    ComplexVec(
        x.chunks(2)
            .map(|c| Complex64::new(c[0], c.get(1).copied().unwrap_or(0.0)))
            .collect(),
    )
}

/// Inverse of [`pack_complex`].
pub fn unpack_complex(z: &ComplexVec, original_len: usize) -> Result<Vec<f64>> {
    if original_len.div_ceil(2) != z.len() {
        return Err(Error::Shape(format!(
            "{} complex symbols cannot hold {original_len} reals",
            z.len()
        )));
    }
    let mut out = z.to_interleaved();
    out.truncate(original_len);
    Ok(out)
}

/// `y = x + σ_ch ε` with `ε` standard normal per real dimension.
pub fn awgn(x: &[f64], sigma_ch: f64, rng: &mut Stream) -> Vec<f64> {
    x.iter().map(|&v| v + sigma_ch * rng.normal()).collect()
}

/// One `CN(0, 1)` draw.
pub fn complex_normal(rng: &mut Stream) -> Complex64 {
    let re = rng.normal() * FRAC_1_SQRT_2;
    let im = rng.normal() * FRAC_1_SQRT_2;
    Complex64::new(re, im)
}

/// An `nr × nt` matrix with i.i.d. `CN(0, 1)` entries.
pub fn draw_rayleigh_matrix(nr: usize, nt: usize, rng: &mut Stream) -> CMatrix {
    let rows: Vec<Vec<Complex64>> = (0..nr)
        .map(|_| (0..nt).map(|_| complex_normal(rng)).collect())
        .collect();
    CMatrix::from_rows(&rows)
}

/// Real noise std for a real signal of the given RMS at `snr_db`.
pub fn awgn_sigma(signal_rms: f64, snr_db: f64) -> f64 {
    signal_rms * 10f64.powf(-snr_db / 20.0)
}

/// Complex noise std giving each real part the same noise as [`awgn_sigma`].
pub fn complex_sigma(signal_rms: f64, snr_db: f64) -> f64 {
    SQRT_2 * awgn_sigma(signal_rms, snr_db)
}

/// Per-complex-symbol power `E|x_k|²` of a packed real signal.
pub fn symbol_power(signal_rms: f64) -> f64 {
    2.0 * signal_rms * signal_rms
}

/// MMSE regularizer `λ = σ_ch² / σ_x²`.
pub fn mmse_lambda(sigma_ch: f64, symbol_power: f64) -> Result<f64> {
    if !(symbol_power > 0.0) || !symbol_power.is_finite() {
        return Err(Error::Domain {
            what: "symbol power",
            value: symbol_power,
            expected: "(0, inf)",
        });
    }
    Ok(sigma_ch * sigma_ch / symbol_power)
}

/// Per-real-dimension noise level of a complex effective noise level.
pub fn landing_level(sigma_eff: f64) -> f64 {
    sigma_eff * FRAC_1_SQRT_2
}

/// One row of the SNR to landing-time table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationRow {
    pub snr_db: f64,
    pub sigma_ch: f64,
    /// `None` when the channel is noisier than the schedule supports.
    pub t_star: Option<f64>,
    /// Landing time on the reversed axis (`t = 0` clean).
    pub t_star_reversed: Option<f64>,
}

/// Landing times for AWGN at each SNR with `σ_ch = signal_rms · 10^(−SNR/20)`.
pub fn calibration_table(signal_rms: f64, snrs_db: &[f64], sched: &NoiseSchedule) -> Vec<CalibrationRow> {
    snrs_db
        .iter()
        .map(|&snr_db| {
            let sigma_ch = awgn_sigma(signal_rms, snr_db);
            let t_star = sched.sigma_inv(sigma_ch).ok();
            CalibrationRow {
                snr_db,
                sigma_ch,
                t_star,
                t_star_reversed: t_star.map(|t| 1.0 - t),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FadingOptions {
    /// Redraw the channel for every channel use instead of once per message.
    pub fast_fading: bool,
    /// Divide the equalized observation by `α`, giving zero-forcing AWGN.
    pub debias: bool,
}

/// Channel draw stored with a report.
#[derive(Debug, Clone, PartialEq)]
pub enum Realization {
    /// Scalar Rayleigh gains: one for block fading, else one per symbol.
    Scalar(Vec<Complex64>),
    /// MIMO matrices with their SVDs: one for block fading, else one per use.
    Mimo(Vec<(CMatrix, Svd)>),
}

/// Equalized observation with per-symbol `(α, σ_eff, t*)`.
///
/// `alpha` is always the equalizer's shrink factor; with `debias` the
/// observation and `sigma_eff` have already been divided by it. Skipped modes
/// (zero gain) carry `α = 0`, `σ_eff = 0`, `t* = 1` and a zero observation.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelReport {
    pub equalized: ComplexVec,
    pub alpha: Vec<f64>,
    pub sigma_eff: Vec<f64>,
    pub t_star: Vec<f64>,
    pub realization: Realization,
    pub sigma_ch: f64,
    pub lambda: f64,
    pub debias: bool,
    /// Length of the real source vector; defaults to twice the symbol count,
    /// set it lower when the source was padded by [`pack_complex`].
    pub original_len: usize,
    /// Symbols per channel use (`N_t`; 1 for Rayleigh).
    pub streams: usize,
}

struct ModeStats {
    weight: f64,
    alpha: f64,
    sigma_eff: f64,
}

fn mode_stats(gain: f64, sigma_ch: f64, lambda: f64, debias: bool) -> ModeStats {
    if !(gain > 0.0) {
        return ModeStats {
            weight: 0.0,
            alpha: 0.0,
            sigma_eff: 0.0,
        };
    }
    let denom = gain * gain + lambda;
    let alpha = gain * gain / denom;
    let weight = gain / denom;
    let sigma_eff = sigma_ch * gain / denom;
    if debias {
        ModeStats {
            weight: weight / alpha,
            alpha,
            sigma_eff: sigma_eff / alpha,
        }
    } else {
        ModeStats {
            weight,
            alpha,
            sigma_eff,
        }
    }
}

fn landing_time(sigma_eff: f64, alpha: f64, sched: &NoiseSchedule, what: &dyn Fn() -> String) -> Result<f64> {
    if alpha == 0.0 {
        return Ok(1.0);
    }
    sched.sigma_inv(landing_level(sigma_eff)).map_err(|e| match e {
        Error::Calibration { level, sigma_max, .. } => Error::Calibration {
            level,
            sigma_max,
            context: format!(" ({})", what()),
        },
        other => other,
    })
}

fn check_channel_args(sigma_ch: f64, lambda: f64) -> Result<()> {
    if !(sigma_ch >= 0.0) || !sigma_ch.is_finite() {
        return Err(Error::Domain {
            what: "sigma_ch",
            value: sigma_ch,
            expected: "[0, inf)",
        });
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Domain {
            what: "lambda",
            value: lambda,
            expected: "[0, inf)",
        });
    }
    Ok(())
}

/// Scalar Rayleigh fading with linear MMSE equalization; draws the gains from `rng`.
pub fn rayleigh_equalize(
    x: &ComplexVec,
    sigma_ch: f64,
    lambda: f64,
    sched: &NoiseSchedule,
    opts: FadingOptions,
    rng: &mut Stream,
) -> Result<ChannelReport> {
    let draws = if opts.fast_fading { x.len() } else { 1 };
    let gains: Vec<Complex64> = (0..draws).map(|_| complex_normal(rng)).collect();
    rayleigh_equalize_with(x, &gains, sigma_ch, lambda, sched, opts.debias, rng)
}

/// [`rayleigh_equalize`] with given gains (one, or one per symbol).
pub fn rayleigh_equalize_with(
    x: &ComplexVec,
    gains: &[Complex64],
    sigma_ch: f64,
    lambda: f64,
    sched: &NoiseSchedule,
    debias: bool,
    rng: &mut Stream,
) -> Result<ChannelReport> {
    check_channel_args(sigma_ch, lambda)?;
    if gains.len() != 1 && gains.len() != x.len() {
        return Err(Error::Shape(format!(
            "{} channel gains for {} symbols",
            gains.len(),
            x.len()
        )));
    }
    let n = x.len();
    let mut report = ChannelReport {
        equalized: ComplexVec(Vec::with_capacity(n)),
        alpha: Vec::with_capacity(n),
        sigma_eff: Vec::with_capacity(n),
        t_star: Vec::with_capacity(n),
        realization: Realization::Scalar(gains.to_vec()),
        sigma_ch,
        lambda,
        debias,
        original_len: 2 * n,
        streams: 1,
    };
    for (k, &xk) in x.as_slice().iter().enumerate() {
        let h = gains[if gains.len() == 1 { 0 } else { k }];
        let y = h * xk + sigma_ch * complex_normal(rng);
        let mag = h.norm();
        let st = mode_stats(mag, sigma_ch, lambda, debias);
        let z = if st.alpha == 0.0 {
            Complex64::new(0.0, 0.0)
        } else {
            (h / mag).conj() * y * st.weight
        };
        let t = landing_time(st.sigma_eff, st.alpha, sched, &|| format!("Rayleigh outage, H = {h}"))?;
        report.equalized.0.push(z);
        report.alpha.push(st.alpha);
        report.sigma_eff.push(st.sigma_eff);
        report.t_star.push(t);
    }
    Ok(report)
}

/// Draw the MIMO channel matrices for `uses` channel uses.
pub fn draw_mimo_channels(nr: usize, nt: usize, uses: usize, fast_fading: bool, rng: &mut Stream) -> Vec<CMatrix> {
    let draws = if fast_fading { uses.max(1) } else { 1 };
    (0..draws).map(|_| draw_rayleigh_matrix(nr, nt, rng)).collect()
}

/// Number of channel uses needed for `symbols` symbols over `nt` streams.
pub fn channel_uses(symbols: usize, nt: usize) -> usize {
    symbols.div_ceil(nt)
}

/// MIMO transmission with SVD-domain per-mode MMSE equalization.
///
/// `channels` holds one matrix (block fading) or one per channel use. The
/// equalized symbols are in the receiver's SVD basis, `N_t` per use.
pub fn mimo_equalize(
    x: &ComplexVec,
    channels: &[CMatrix],
    sigma_ch: f64,
    lambda: f64,
    sched: &NoiseSchedule,
    debias: bool,
    rng: &mut Stream,
) -> Result<ChannelReport> {
    check_channel_args(sigma_ch, lambda)?;
    let first = channels
        .first()
        .ok_or_else(|| Error::Shape("no channel matrix".into()))?;
    let (nr, nt) = (first.rows(), first.cols());
    if nr == 0 || nt == 0 {
        return Err(Error::Shape(format!("{nr}x{nt} channel matrix")));
    }
    if channels.iter().any(|h| (h.rows(), h.cols()) != (nr, nt)) {
        return Err(Error::Shape("channel matrices differ in shape".into()));
    }
    if let Some(bad) = channels.iter().position(|h| !h.is_finite()) {
        return Err(Error::Numeric(format!("channel matrix {bad} is not finite")));
    }
    let uses = channel_uses(x.len(), nt);
    if channels.len() != 1 && channels.len() != uses {
        return Err(Error::Shape(format!(
            "{} channel matrices for {uses} channel uses",
            channels.len()
        )));
    }

    let factors: Vec<(CMatrix, Svd)> = channels.iter().map(|h| (h.clone(), svd(h))).collect();
    let total = uses * nt;
    let mut report = ChannelReport {
        equalized: ComplexVec(Vec::with_capacity(total)),
        alpha: Vec::with_capacity(total),
        sigma_eff: Vec::with_capacity(total),
        t_star: Vec::with_capacity(total),
        realization: Realization::Mimo(Vec::new()),
        sigma_ch,
        lambda,
        debias,
        original_len: 2 * x.len(),
        streams: nt,
    };
    let zero = Complex64::new(0.0, 0.0);
    for u in 0..uses {
        let (h, dec) = &factors[if factors.len() == 1 { 0 } else { u }];
        let xu: Vec<Complex64> = (0..nt)
            .map(|i| x.as_slice().get(u * nt + i).copied().unwrap_or(zero))
            .collect();
        let mut y = h.mul_vec(&xu);
        for yi in &mut y {
            *yi += sigma_ch * complex_normal(rng);
        }
        let y_rot = dec.u.adjoint_mul_vec(&y);
        for i in 0..nt {
            let gain = dec.sigma.get(i).copied().unwrap_or(0.0);
            let st = mode_stats(gain, sigma_ch, lambda, debias);
            let z = if st.alpha == 0.0 { zero } else { y_rot[i] * st.weight };
            let t = landing_time(st.sigma_eff, st.alpha, sched, &|| {
                format!("MIMO outage at use {u}, mode {i}, singular value {gain}")
            })?;
            report.equalized.0.push(z);
            report.alpha.push(st.alpha);
            report.sigma_eff.push(st.sigma_eff);
            report.t_star.push(t);
        }
    }
    report.realization = Realization::Mimo(factors);
    Ok(report)
}

impl ChannelReport {
    /// Subchannel gain (`|H|` or `σ_i`) for every equalized symbol.
    pub fn gains(&self) -> Vec<f64> {
        let n = self.equalized.len();
        match &self.realization {
            Realization::Scalar(h) => (0..n).map(|k| h[if h.len() == 1 { 0 } else { k }].norm()).collect(),
            Realization::Mimo(f) => (0..n)
                .map(|k| {
                    let u = k / self.streams;
                    let (_, dec) = &f[if f.len() == 1 { 0 } else { u }];
                    dec.sigma.get(k % self.streams).copied().unwrap_or(0.0)
                })
                .collect(),
        }
    }

    /// Largest deviation between the stored `(α, σ_eff, t*)` and values
    /// recomputed from the stored channel draw.
    pub fn consistency_error(&self, sched: &NoiseSchedule) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for (k, g) in self.gains().into_iter().enumerate() {
            let st = mode_stats(g, self.sigma_ch, self.lambda, self.debias);
            let t = landing_time(st.sigma_eff, st.alpha, sched, &|| format!("symbol {k}"))?;
            worst = worst
                .max((st.alpha - self.alpha[k]).abs())
                .max((st.sigma_eff - self.sigma_eff[k]).abs())
                .max((t - self.t_star[k]).abs());
        }
        Ok(worst)
    }

    fn rotate_back(&self, symbols: &[Complex64]) -> Vec<Complex64> {
        match &self.realization {
            Realization::Scalar(_) => symbols.to_vec(),
            Realization::Mimo(f) => symbols
                .chunks(self.streams)
                .enumerate()
                .flat_map(|(u, chunk)| {
                    let (_, dec) = &f[if f.len() == 1 { 0 } else { u }];
                    dec.v.mul_vec(chunk)
                })
                .collect(),
        }
    }

    fn to_source(&self, symbols: &[Complex64]) -> Result<Vec<f64>> {
        let mut rotated = self.rotate_back(symbols);
        rotated.truncate(self.original_len.div_ceil(2));
        unpack_complex(&ComplexVec(rotated), self.original_len)
    }

    /// The equalized observation mapped back to the source domain, unprocessed.
    pub fn landing_point(&self) -> Result<Vec<f64>> {
        self.to_source(self.equalized.as_slice())
    }
}

impl ChannelReport {
    fn rotate_forward(&self, symbols: &[Complex64]) -> Vec<Complex64> {
        match &self.realization {
            Realization::Scalar(_) => symbols.to_vec(),
            Realization::Mimo(f) => symbols
                .chunks(self.streams)
                .enumerate()
                .flat_map(|(u, chunk)| {
                    let (_, dec) = &f[if f.len() == 1 { 0 } else { u }];
                    dec.v.adjoint_mul_vec(chunk)
                })
                .collect(),
        }
    }
}

/// The source-domain field expressed in the receiver's SVD basis:
/// `ṽ(x̃, t) = Vᴴ v(V x̃, t)` per channel use. A field of fixed dimension
/// sees the leading coordinates only; padding gets zero velocity.
struct Rotated<'a, F> {
    field: &'a F,
    report: &'a ChannelReport,
}

impl<F: VelocityField> VelocityField for Rotated<'_, F> {
    fn dim(&self) -> Option<usize> {
        None
    }

    fn velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        let source = ComplexVec(self.report.rotate_back(pack_complex(x).as_slice())).to_interleaved();
        let mut v = match self.field.dim() {
            Some(d) if d < source.len() => self.field.velocity(&source[..d], t)?,
            _ => self.field.velocity(&source, t)?,
        };
        v.resize(source.len(), 0.0);
        Ok(ComplexVec(self.report.rotate_forward(pack_complex(&v).as_slice())).to_interleaved())
    }
}

/// Transport every equalized symbol from its landing time to `t = 1`, rotate
/// back to the source basis and unpack.
///
/// The state lives in the receiver's SVD basis and the field is applied there
/// through the change of coordinates. Symbols are integrated with the staged
/// policy of [`integrate_staged`]: the shared clock starts at the earliest
/// landing time and each symbol joins once the clock reaches its own.
pub fn decode_report(
    report: &ChannelReport,
    field: &impl VelocityField,
    solver: Solver,
    steps: usize,
    clamp_output: bool,
) -> Result<Vec<f64>> {
    let state = report.equalized.to_interleaved();
    if let Some(d) = field.dim() {
        if d < report.original_len || d > state.len() {
            return Err(Error::Shape(format!(
                "field dimension {d} does not fit a {}-entry source",
                report.original_len
            )));
        }
    }
    let starts: Vec<f64> = report.t_star.iter().flat_map(|&t| [t, t]).collect();
    let rotated = Rotated { field, report };
    let decoded = integrate_staged(&rotated, &state, &starts, solver, steps, false)?;
    let symbols = pack_complex(&decoded);
    let mut out = report.to_source(symbols.as_slice())?;
    if clamp_output {
        for v in &mut out {
            *v = v.clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

/// [`decode_report`] for reports from [`mimo_equalize`].
pub fn mimo_decode(
    report: &ChannelReport,
    field: &impl VelocityField,
    solver: Solver,
    steps: usize,
) -> Result<Vec<f64>> {
    decode_report(report, field, solver, steps, false)
}
