//! Self-check suite: the eight acceptance criteria, each returning measured
//! values against their tolerances. Shared by `ltt verify` and the
//! `acceptance` test target.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use crate::cfm_trainer::{train, TrainConfig};
use crate::channel::{
    calibration_table, complex_normal, draw_rayleigh_matrix, jacobi_svd, mimo_decode, mimo_equalize, mmse_lambda,
    pack_complex, rayleigh_equalize, svd, CMatrix, ComplexVec, FadingOptions,
};
use crate::data_io::{crop_center, downsample, load_idx, Dataset, GmmComponent};
use crate::flow_path::{continuity_residual, marginal_field_gaussian, marginal_field_gmm};
use crate::ode_decoder::{convergence_profile, decode_awgn, integrate, loglog_slope, FnField};
use crate::pipeline::{evaluate, ChannelKind, LinkConfig, SweepPoint};
use crate::rng::{tags, Stream};
use crate::scalar_bench::{
    exact_scalar_decode, excess_mse, excess_mse_asymptote, ltt_gain, mmse_gain, ScalarField, ScalarModel,
};
use crate::student_field::{load_checkpoint, FieldArchitecture, FieldParams};
use crate::{DecodeConfig, Error, NoiseSchedule, Result, Solver, VelocityField};

/// Reversed-axis landing times for SNR 0, 3, 5, 7, 10, 12, 15 dB at signal RMS 0.463.
pub const LANDING_TABLE: [(f64, f64); 7] = [
    (0.0, 0.463),
    (3.0, 0.328),
    (5.0, 0.261),
    (7.0, 0.207),
    (10.0, 0.147),
    (12.0, 0.116),
    (15.0, 0.082),
];

pub const LANDING_TABLE_RMS: f64 = 0.463;

pub const MNIST_IMAGES: &str = "mnist-subset-images.idx3-ubyte";
pub const MNIST_LABELS: &str = "mnist-subset-labels.idx1-ubyte";

/// One measured quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub label: String,
    pub value: f64,
    pub tolerance: String,
    pub ok: bool,
    /// Supplementary checks are reported but do not decide the verdict.
    pub required: bool,
}

impl Check {
    fn new(label: impl Into<String>, value: f64, tolerance: impl Into<String>, ok: bool) -> Self {
        Check {
            label: label.into(),
            value,
            tolerance: tolerance.into(),
            ok,
            required: true,
        }
    }

    fn within(label: impl Into<String>, value: f64, lo: f64, hi: f64) -> Self {
        Self::new(label, value, format!("[{lo}, {hi}]"), (lo..=hi).contains(&value))
    }

    fn at_most(label: impl Into<String>, value: f64, max: f64) -> Self {
        Self::new(label, value, format!("<= {max:e}"), value <= max)
    }

    fn at_least(label: impl Into<String>, value: f64, min: f64) -> Self {
        Self::new(label, value, format!(">= {min}"), value >= min)
    }

    fn supplementary(mut self) -> Self {
        self.required = false;
        self
    }
}

#[derive(Debug, Clone)]
pub struct CriterionReport {
    pub id: u8,
    pub title: &'static str,
    pub checks: Vec<Check>,
    pub notes: Vec<String>,
    /// Set when the criterion could not be evaluated.
    pub error: Option<String>,
    pub elapsed: Duration,
    pub budget: Duration,
}

impl CriterionReport {
    pub fn within_budget(&self) -> bool {
        self.elapsed <= self.budget
    }

    pub fn passed(&self) -> bool {
        self.error.is_none()
            && !self.checks.is_empty()
            && self.checks.iter().filter(|c| c.required).all(|c| c.ok)
            && self.within_budget()
    }

    pub fn check(&self, label_prefix: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.label.starts_with(label_prefix))
    }

    /// Multi-line detail: every check, then notes.
    pub fn details(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let mark = if c.ok { "ok" } else { "FAIL" };
            let kind = if c.required { "" } else { " (supplementary)" };
            out.push_str(&format!(
                "    {mark:4} {}{kind}: {} vs {}\n",
                c.label,
                show(c.value),
                c.tolerance
            ));
        }
        if let Some(e) = &self.error {
            out.push_str(&format!("    error: {e}\n"));
        }
        for n in &self.notes {
            out.push_str(&format!("    note: {n}\n"));
        }
        out
    }
}

/// Six decimals, or scientific notation for tiny magnitudes.
fn show(v: f64) -> String {
    if v != 0.0 && v.abs() < 1e-3 {
        format!("{v:.3e}")
    } else {
        format!("{v:.6}")
    }
}

impl fmt::Display for CriterionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed() { "PASS" } else { "FAIL" };
        let headline = match (&self.error, self.checks.iter().find(|c| c.required && !c.ok)) {
            (Some(e), _) => format!("error: {e}"),
            (None, Some(c)) => format!("{} = {} vs {}", c.label, show(c.value), c.tolerance),
            (None, None) => self
                .checks
                .first()
                .map(|c| format!("{} = {} vs {}", c.label, show(c.value), c.tolerance))
                .unwrap_or_default(),
        };
        write!(
            f,
            "[{verdict}] criterion {}: {}: {headline}; {:.2}s of {:.0}s",
            self.id,
            self.title,
            self.elapsed.as_secs_f64(),
            self.budget.as_secs_f64()
        )
    }
}

fn timed(
    id: u8,
    title: &'static str,
    budget_secs: u64,
    body: impl FnOnce(&mut Vec<Check>, &mut Vec<String>) -> Result<()>,
) -> CriterionReport {
    let start = Instant::now();
    let mut checks = Vec::new();
    let mut notes = Vec::new();
    let error = body(&mut checks, &mut notes).err().map(|e| e.to_string());
    CriterionReport {
        id,
        title,
        checks,
        notes,
        error,
        elapsed: start.elapsed(),
        budget: Duration::from_secs(budget_secs),
    }
}

/// Closed-form scalar gains and excess MSE against a least-squares Monte-Carlo oracle.
pub fn closed_forms(seed: u64) -> CriterionReport {
    timed(1, "scalar closed forms", 5, |checks, notes| {
        let (sigma_x, sigma_ch) = (1.0, 3.0);
        let m = ScalarModel::new(sigma_x, sigma_ch)?;
        let n = 1_000_000;
        let mut rng = Stream::new(seed, tags::ORACLE);
        let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let x = sigma_x * rng.normal();
            let y = x + sigma_ch * rng.normal();
            sxx += x * x;
            sxy += x * y;
            syy += y * y;
        }
        // Least-squares gain, variance-matching gain, and the excess of the
        // latter over the former under the empirical second moments.
        let a_ls = sxy / syy;
        let a_match = (sxx / syy).sqrt();
        let a_ltt = ltt_gain(&m);
        let emp_excess = syy / n as f64 * (a_ltt - a_ls).powi(2);
        let rel = |a: f64, b: f64| (a / b - 1.0).abs();
        checks.push(Check::at_most("mmse_gain rel. error", rel(a_ls, mmse_gain(&m)), 0.01));
        checks.push(Check::at_most("ltt_gain rel. error", rel(a_match, a_ltt), 0.01));
        checks.push(Check::at_most(
            "excess_mse rel. error",
            rel(emp_excess, excess_mse(&m)),
            0.01,
        ));
        let small = ScalarModel::new(1.0, 0.01)?;
        checks.push(Check::within(
            "excess / asymptote at sigma_ch=0.01",
            excess_mse(&small) / excess_mse_asymptote(&small),
            0.995,
            1.005,
        ));
        notes.push(format!("{n} pairs at sigma_x = {sigma_x}, sigma_ch = {sigma_ch}"));
        Ok(())
    })
}

/// AWGN landing times on the reversed axis against the published table.
pub fn landing_table() -> CriterionReport {
    timed(2, "landing-time table", 1, |checks, notes| {
        let sched = NoiseSchedule::linear(1.0);
        let snrs: Vec<f64> = LANDING_TABLE.iter().map(|r| r.0).collect();
        let rows = calibration_table(LANDING_TABLE_RMS, &snrs, &sched);
        let mut worst: f64 = 0.0;
        let mut rounded_equal = 0;
        for (row, &(snr, expected)) in rows.iter().zip(&LANDING_TABLE) {
            let t = row
                .t_star_reversed
                .ok_or_else(|| Error::Config(format!("no landing time at {snr} dB")))?;
            worst = worst.max((t - expected).abs());
            if ((t * 1000.0).round() - expected * 1000.0).abs() < 0.5 {
                rounded_equal += 1;
            }
        }
        checks.push(Check::at_most("max |t* - table|", worst, 1e-3));
        checks.push(
            Check::at_least("rows equal after rounding to 3 decimals", rounded_equal as f64, 7.0).supplementary(),
        );
        notes.push(
            "the tabulated 5 dB and 10 dB entries round from an RMS slightly above 0.463 (about 0.4633); \
             at 0.463 they differ by less than one unit in the third decimal"
                .into(),
        );
        Ok(())
    })
}

fn linear_fit_r2(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    if syy == 0.0 {
        return 1.0;
    }
    sxy * sxy / (sxx * syy)
}

/// Median per-sample decode time for each step count.
pub fn decode_latency(
    field: &impl VelocityField,
    batch: &[Vec<f64>],
    t_start: f64,
    solver: Solver,
    n_list: &[usize],
    repeats: usize,
) -> Result<Vec<(usize, f64)>> {
    let mut out = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let cfg = DecodeConfig::new(solver, n, t_start)?;
        let mut times = Vec::with_capacity(repeats);
        for _ in 0..repeats.max(1) {
            let start = Instant::now();
            for x in batch {
                std::hint::black_box(integrate(field, x, &cfg)?);
            }
            times.push(start.elapsed().as_secs_f64() / batch.len() as f64);
        }
        times.sort_by(f64::total_cmp);
        out.push((n, times[times.len() / 2]));
    }
    Ok(out)
}

/// Euler and midpoint orders on the analytic scalar field, plus latency linearity.
pub fn convergence(seed: u64) -> CriterionReport {
    timed(3, "solver convergence and latency", 30, |checks, notes| {
        let sched = NoiseSchedule::linear(1.0);
        let model = ScalarModel::new(1.0, 1.0)?;
        let field = ScalarField { model, schedule: sched };
        let t_star = sched.sigma_inv(model.sigma_ch())?;
        let y = 2.0;
        let exact = exact_scalar_decode(y, &model, &sched)?;
        let ns = [5, 10, 20, 40, 80];
        let euler = convergence_profile(&field, &[y], t_star, Solver::Euler, &ns, Some(&[exact]))?;
        let mid = convergence_profile(&field, &[y], t_star, Solver::Midpoint, &ns, Some(&[exact]))?;
        checks.push(Check::within("Euler slope", euler.slope, -1.2, -0.8));
        checks.push(Check::within("midpoint slope", mid.slope, -2.3, -1.7));

        // Same solvers on a two-component mixture, whose exact field has no
        // special structure; reference is a 10x finer midpoint run.
        let comps = [
            GmmComponent {
                weight: 0.5,
                mean: vec![-1.0],
                std: 0.4,
            },
            GmmComponent {
                weight: 0.5,
                mean: vec![1.0],
                std: 0.4,
            },
        ];
        let gmm = FnField(|x: &[f64], t: f64| marginal_field_gmm(x, t, &comps, &sched).expect("valid mixture"));
        let g_mid = convergence_profile(&gmm, &[0.3], 0.2, Solver::Midpoint, &ns, None)?;
        let g_euler = convergence_profile(&gmm, &[1.5], 0.2, Solver::Euler, &ns, None)?;
        checks.push(Check::within("midpoint slope, mixture field", g_mid.slope, -2.3, -1.7).supplementary());
        checks.push(Check::within("Euler slope, mixture field", g_euler.slope, -1.2, -0.8).supplementary());
        if !(-2.3..=-1.7).contains(&mid.slope) {
            notes.push(format!(
                "midpoint is third order on the scalar Gaussian field (measured {:.3}): its h^3 local error \
                 coefficient -a^3/6 - a a'/4 - a''/24 vanishes identically for a(t) = -(1-t)/(sigma_x^2 + (1-t)^2)",
                mid.slope
            ));
        }

        let arch = FieldArchitecture::new(64, vec![64, 64], 4)?;
        let mut params = FieldParams::init(arch, seed)?;
        let mut rng = Stream::new(seed, tags::INIT);
        for l in params.layers_mut() {
            for v in l.values_mut() {
                *v = 0.2 * (rng.uniform() - 0.5);
            }
        }
        let batch: Vec<Vec<f64>> = (0..32).map(|_| rng.normal_vec(64)).collect();
        let lat = decode_latency(&params, &batch, 0.3, Solver::Euler, &ns, 5)?;
        let pts: Vec<(f64, f64)> = lat.iter().map(|&(n, s)| (n as f64, s)).collect();
        checks.push(Check::at_least(
            "latency vs N linear fit R^2",
            linear_fit_r2(&pts),
            0.98,
        ));
        notes.push(format!(
            "per-sample latency: {}",
            lat.iter()
                .map(|(n, s)| format!("N={n}: {:.1} us", s * 1e6))
                .collect::<Vec<_>>()
                .join(", ")
        ));
        Ok(())
    })
}

/// Training and decoding budget for [`training_fidelity`].
#[derive(Debug, Clone)]
pub struct FidelityOptions {
    pub seed: u64,
    pub train_samples: usize,
    pub train: TrainConfig,
    pub eval_samples: usize,
    pub solver: Solver,
    pub steps: usize,
}

impl Default for FidelityOptions {
    fn default() -> Self {
        FidelityOptions {
            seed: 7,
            train_samples: 20_000,
            train: TrainConfig {
                epochs: 60,
                batch_size: 256,
                learning_rate: 2e-3,
                final_learning_rate: Some(1e-5),
                hidden_dims: vec![64, 64],
                time_features: 4,
                log_every: 1000,
                ..TrainConfig::default()
            },
            eval_samples: 10_000,
            solver: Solver::Midpoint,
            steps: 20,
        }
    }
}

/// Probe-grid RMSE between a 1-D field and the exact `N(0, 1)` marginal field.
pub fn probe_rmse(field: &impl VelocityField, sched: &NoiseSchedule) -> Result<f64> {
    let mut acc = 0.0;
    let mut count = 0;
    for i in 0..=60 {
        let x = -3.0 + 0.1 * i as f64;
        for j in 0..=19 {
            let t = 0.05 * j as f64;
            let v = field.velocity(&[x], t)?[0];
            let exact = marginal_field_gaussian(&[x], t, &[0.0], 1.0, sched)?[0];
            acc += (v - exact).powi(2);
            count += 1;
        }
    }
    Ok((acc / count as f64).sqrt())
}

/// CFM training on a 1-D standard Gaussian: field RMSE and end-to-end decode MSE.
pub fn training_fidelity(opts: &FidelityOptions) -> CriterionReport {
    timed(4, "CFM training fidelity", 180, |checks, notes| {
        let sched = opts.train.schedule;
        let mut data_rng = Stream::new(opts.seed, tags::DATA);
        let data: Vec<Vec<f64>> = (0..opts.train_samples).map(|_| vec![data_rng.normal()]).collect();
        let config = TrainConfig {
            seed: opts.seed,
            ..opts.train.clone()
        };
        let outcome = train(&config, &data)?;
        let field = outcome.params;
        checks.push(Check::at_most("probe-grid RMSE", probe_rmse(&field, &sched)?, 0.05));

        let sigma_ch = 10f64.powf(-10.0 / 20.0);
        let bound = sigma_ch * sigma_ch / (1.0 + sigma_ch * sigma_ch);
        let mut rng = Stream::new(opts.seed, tags::ORACLE);
        let mut se = 0.0;
        for _ in 0..opts.eval_samples {
            let x = rng.normal();
            let y = x + sigma_ch * rng.normal();
            let xh = decode_awgn(&[y], sigma_ch, &sched, &field, opts.solver, opts.steps)?[0];
            se += (xh - x).powi(2);
        }
        let mse = se / opts.eval_samples as f64;
        checks.push(Check::at_most(
            "decode MSE / MMSE bound - 1 at 10 dB",
            (mse / bound - 1.0).abs(),
            0.10,
        ));
        notes.push(format!(
            "decode MSE {mse:.5}, MMSE bound {bound:.5}, ideal LTT {:.5}; {} Adam steps, final loss {:.4}",
            2.0 - 2.0 / (1.0 + sigma_ch * sigma_ch).sqrt(),
            outcome.history.len(),
            crate::cfm_trainer::smoothed(&outcome.history, 200)
                .last()
                .copied()
                .unwrap_or(f64::NAN)
        ));
        Ok(())
    })
}

/// Rayleigh noise statistics, MIMO/AWGN reduction and SVD residuals.
pub fn channel_reduction(seed: u64) -> CriterionReport {
    timed(5, "channel reduction", 30, |checks, _notes| {
        let sched = NoiseSchedule::linear(1.0);
        let mut rng = Stream::new(seed, tags::CHANNEL);

        let n = 100_000;
        let x = ComplexVec((0..n).map(|_| complex_normal(&mut rng)).collect());
        let sigma_ch = 0.5;
        let lambda = mmse_lambda(sigma_ch, 1.0)?;
        let report = rayleigh_equalize(&x, sigma_ch, lambda, &sched, FadingOptions::default(), &mut rng)?;
        let (alpha, sigma_eff) = (report.alpha[0], report.sigma_eff[0]);
        let var = report
            .equalized
            .as_slice()
            .iter()
            .zip(x.as_slice())
            .map(|(z, x)| (z - alpha * x).norm_sqr())
            .sum::<f64>()
            / n as f64;
        checks.push(Check::at_most(
            "Rayleigh |Var(Z - alpha x) / sigma_eff^2 - 1|",
            (var / (sigma_eff * sigma_eff) - 1.0).abs(),
            0.02,
        ));
        checks.push(Check::at_most(
            "report consistency",
            report.consistency_error(&sched)?,
            1e-12,
        ));

        let model = ScalarModel::new(0.5, 0.3)?;
        let field = ScalarField { model, schedule: sched };
        let src: Vec<f64> = (0..64).map(|_| 0.5 * rng.normal()).collect();
        let r = mimo_equalize(
            &pack_complex(&src),
            &[CMatrix::identity(2)],
            0.3,
            0.0,
            &sched,
            false,
            &mut rng,
        )?;
        let landed = r.landing_point()?;
        let awgn = decode_awgn(
            &landed,
            crate::channel::landing_level(0.3),
            &sched,
            &field,
            Solver::Midpoint,
            10,
        )?;
        let mimo = mimo_decode(&r, &field, Solver::Midpoint, 10)?;
        let gap = awgn.iter().zip(&mimo).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        checks.push(Check::at_most("MIMO(H = I) vs AWGN pipeline max |diff|", gap, 1e-9));

        let (mut recon, mut unit): (f64, f64) = (0.0, 0.0);
        let mut measure = |h: &CMatrix, s: &crate::channel::Svd| {
            recon = recon.max(s.reconstruct().frobenius_distance(h));
            for m in [&s.u, &s.v] {
                unit = unit.max(m.adjoint().matmul(m).frobenius_distance(&CMatrix::identity(m.cols())));
            }
        };
        for _ in 0..2000 {
            let h = draw_rayleigh_matrix(2, 2, &mut rng);
            measure(&h, &svd(&h));
        }
        for (nr, nt) in [(3, 3), (4, 4), (4, 2), (2, 4), (8, 8)] {
            for _ in 0..100 {
                let h = draw_rayleigh_matrix(nr, nt, &mut rng);
                measure(&h, &jacobi_svd(&h));
            }
        }
        checks.push(Check::at_most("SVD reconstruction residual", recon, 1e-10));
        checks.push(Check::at_most("SVD unitarity residual", unit, 1e-10));
        Ok(())
    })
}

/// Observed order of the continuity-equation residual in the time step.
pub fn continuity_order() -> CriterionReport {
    timed(6, "continuity equation", 10, |checks, _notes| {
        let sched = NoiseSchedule::linear(1.0);
        let hs = [0.04, 0.02, 0.01, 0.005];
        let mut worst = f64::INFINITY;
        for d in [1usize, 2, 8] {
            let x1: Vec<f64> = (0..d).map(|i| 0.1 * i as f64 - 0.2).collect();
            let x: Vec<f64> = x1.iter().map(|v| v + 0.25).collect();
            let mut pts = Vec::with_capacity(hs.len());
            for &h in &hs {
                let r = continuity_residual(&x, 0.4, &x1, &sched, h)?;
                pts.push(((1.0 / h) as usize, r));
            }
            let order = -loglog_slope(&pts);
            checks.push(Check::at_least(format!("order, d = {d}"), order, 1.9));
            worst = worst.min(order);
        }
        Ok(())
    })
}

/// Backprop gradients against central differences on a randomized toy network.
pub fn gradient_check(seed: u64) -> CriterionReport {
    timed(7, "gradient correctness", 5, |checks, notes| {
        let arch = FieldArchitecture::new(3, vec![6, 5], 2)?;
        let mut p = FieldParams::init(arch, seed)?;
        let mut rng = Stream::new(seed, tags::INIT);
        for l in p.layers_mut() {
            for v in l.values_mut() {
                *v = rng.uniform() - 0.5;
            }
        }
        let x = rng.normal_vec(3);
        let target = rng.normal_vec(3);
        let t = 0.37;
        p.zero_gradients();
        p.backward(&x, t, &target)?;
        let analytic = p.gradient_vector();
        let loss = |p: &FieldParams| -> Result<f64> {
            Ok(p.forward(&x, t)?
                .iter()
                .zip(&target)
                .map(|(a, b)| (a - b).powi(2))
                .sum())
        };
        let delta = 1e-5;
        let mut worst: f64 = 0.0;
        for (i, &g) in analytic.iter().enumerate() {
            let base = *p.parameter_mut(i).expect("index in range");
            *p.parameter_mut(i).expect("index in range") = base + delta;
            let up = loss(&p)?;
            *p.parameter_mut(i).expect("index in range") = base - delta;
            let down = loss(&p)?;
            *p.parameter_mut(i).expect("index in range") = base;
            let fd = (up - down) / (2.0 * delta);
            worst = worst.max((fd - g).abs() / fd.abs().max(g.abs()).max(1e-8));
        }
        checks.push(Check::at_most("max relative error", worst, 1e-4));
        notes.push(format!("{} parameters", analytic.len()));
        Ok(())
    })
}

/// The 8x8 MNIST subset shipped with the crate.
pub fn load_mnist_8x8(dir: &Path) -> Result<Dataset> {
    let ds = load_idx(&dir.join(MNIST_IMAGES), Some(&dir.join(MNIST_LABELS)))?;
    let ds = crop_center(&ds, 24, 24)?;
    downsample(&ds, 3)
}

/// Budget for [`end_to_end`].
#[derive(Debug, Clone)]
pub struct ImageOptions {
    pub seed: u64,
    pub data_dir: PathBuf,
    pub train_images: usize,
    pub eval_images: usize,
    pub train: TrainConfig,
    pub snrs_db: Vec<f64>,
    pub solver: Solver,
    pub steps: usize,
    pub mimo: (usize, usize),
    /// Independent channel draws per evaluation image in the fading sweeps;
    /// messages = `eval_images × fading_draws`.
    pub fading_draws: usize,
}

impl ImageOptions {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        ImageOptions {
            seed: 11,
            data_dir: data_dir.into(),
            train_images: 800,
            eval_images: 200,
            train: TrainConfig {
                epochs: 400,
                batch_size: 64,
                learning_rate: 1e-3,
                final_learning_rate: Some(1e-5),
                hidden_dims: vec![256, 256],
                time_features: 4,
                log_every: 1000,
                ..TrainConfig::default()
            },
            snrs_db: vec![0.0, 3.0, 5.0, 10.0, 15.0],
            solver: Solver::Midpoint,
            steps: 10,
            mimo: (2, 2),
            fading_draws: 10,
        }
    }
}

/// Trained field on 8x8 MNIST: AWGN gains and trend, MIMO against Rayleigh.
pub fn end_to_end(opts: &ImageOptions) -> CriterionReport {
    timed(8, "end-to-end improvement", 1200, |checks, notes| {
        let ds = load_mnist_8x8(&opts.data_dir)?;
        if ds.len() < opts.train_images + opts.eval_images {
            return Err(Error::Config(format!(
                "dataset has {} images, need {}",
                ds.len(),
                opts.train_images + opts.eval_images
            )));
        }
        let (train_ds, rest) = ds.split_at(opts.train_images);
        let eval = rest.take(opts.eval_images);
        let config = TrainConfig {
            seed: opts.seed,
            ..opts.train.clone()
        };
        let outcome = train(&config, &train_ds.samples)?;
        let field = outcome.params;
        let rms = train_ds.signal_rms();
        let sched = config.schedule;
        notes.push(format!(
            "{} train / {} eval images, signal RMS {rms:.4}, {} Adam steps",
            train_ds.len(),
            eval.len(),
            outcome.history.len()
        ));

        let awgn = sweep(&field, &eval, rms, opts, &sched, ChannelKind::Awgn, false)?;
        let min_gain = awgn.iter().map(|p| p.delta_psnr_db).fold(f64::INFINITY, f64::min);
        checks.push(Check::new("min AWGN delta-PSNR (dB)", min_gain, "> 0", min_gain > 0.0));
        let worst_drop = awgn
            .windows(2)
            .map(|w| w[0].psnr_db - w[1].psnr_db)
            .fold(f64::NEG_INFINITY, f64::max);
        checks.push(Check::at_most("max PSNR drop between SNR steps (dB)", worst_drop, 0.2));

        let margin = |a: &[SweepPoint], b: &[SweepPoint]| {
            a.iter()
                .zip(b)
                .map(|(r, m)| m.psnr_db - r.psnr_db)
                .fold(f64::INFINITY, f64::min)
        };
        let ray = sweep(&field, &eval, rms, opts, &sched, ChannelKind::Rayleigh, false)?;
        let mimo = sweep(&field, &eval, rms, opts, &sched, ChannelKind::Mimo, false)?;
        let block = margin(&ray, &mimo);
        checks.push(Check::new(
            "min MIMO - Rayleigh mean PSNR, block fading (dB)",
            block,
            ">= 0",
            block >= 0.0,
        ));
        let ray_fast = sweep(&field, &eval, rms, opts, &sched, ChannelKind::Rayleigh, true)?;
        let mimo_fast = sweep(&field, &eval, rms, opts, &sched, ChannelKind::Mimo, true)?;
        let fast = margin(&ray_fast, &mimo_fast);
        checks.push(
            Check::new(
                "min MIMO - Rayleigh mean PSNR, fast fading (dB)",
                fast,
                ">= 0",
                fast >= 0.0,
            )
            .supplementary(),
        );
        notes.push(format!(
            "{} messages per fading channel and SNR ({} draws per image)",
            eval.len() * opts.fading_draws.max(1),
            opts.fading_draws.max(1)
        ));
        notes.push("mean decoded PSNR in dB, gain over the received signal in parentheses".into());
        for (((a, r), m), (rf, mf)) in awgn.iter().zip(&ray).zip(&mimo).zip(ray_fast.iter().zip(&mimo_fast)) {
            notes.push(format!(
                "{:>4} dB: AWGN {:.2} ({:+.2}); block Rayleigh {:.2} ({:+.2}), MIMO {:.2} ({:+.2}); \
                 fast Rayleigh {:.2}, MIMO {:.2}",
                a.snr_db,
                a.psnr_db,
                a.delta_psnr_db,
                r.psnr_db,
                r.delta_psnr_db,
                m.psnr_db,
                m.delta_psnr_db,
                rf.psnr_db,
                mf.psnr_db
            ));
        }
        Ok(())
    })
}

fn sweep(
    field: &impl VelocityField,
    eval: &Dataset,
    rms: f64,
    opts: &ImageOptions,
    sched: &NoiseSchedule,
    channel: ChannelKind,
    fast_fading: bool,
) -> Result<Vec<SweepPoint>> {
    let messages = match channel {
        ChannelKind::Awgn => eval.len(),
        _ => eval.len() * opts.fading_draws.max(1),
    };
    opts.snrs_db
        .iter()
        .map(|&snr| {
            let cfg = LinkConfig {
                schedule: *sched,
                solver: opts.solver,
                steps: opts.steps,
                clamp: true,
                mimo: opts.mimo,
                fading: FadingOptions {
                    fast_fading,
                    debias: false,
                },
                seed: opts.seed,
                ..LinkConfig::new(channel, snr, rms)
            };
            evaluate(field, &eval.samples, messages, &cfg)
        })
        .collect()
}

/// A checkpoint file that fails to load is reported rather than aborting.
pub fn checkpoint_probe(path: &Path) -> std::result::Result<String, String> {
    load_checkpoint(path)
        .map(|(p, _)| format!("{}: {} parameters", path.display(), p.parameter_count()))
        .map_err(|e| format!("{}: {e}", path.display()))
}

/// Everything [`run_all`] needs.
#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub seed: u64,
    pub fidelity: FidelityOptions,
    pub images: ImageOptions,
}

impl VerifyOptions {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        VerifyOptions {
            seed: 1,
            fidelity: FidelityOptions::default(),
            images: ImageOptions::new(data_dir),
        }
    }
}

pub const CRITERIA: std::ops::RangeInclusive<u8> = 1..=8;

/// Run criterion `id`; `None` for an unknown id.
pub fn run_one(id: u8, opts: &VerifyOptions) -> Option<CriterionReport> {
    Some(match id {
        1 => closed_forms(opts.seed),
        2 => landing_table(),
        3 => convergence(opts.seed),
        4 => training_fidelity(&opts.fidelity),
        5 => channel_reduction(opts.seed),
        6 => continuity_order(),
        7 => gradient_check(opts.seed),
        8 => end_to_end(&opts.images),
        _ => return None,
    })
}

/// Run criteria 1 to 8 in order, calling `each` as each one finishes.
pub fn run_all(opts: &VerifyOptions, mut each: impl FnMut(&CriterionReport)) -> Vec<CriterionReport> {
    CRITERIA
        .filter_map(|id| run_one(id, opts))
        .inspect(|r| each(r))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_criteria_pass() {
        for r in [
            landing_table(),
            channel_reduction(3),
            continuity_order(),
            gradient_check(5),
        ] {
            assert!(r.passed(), "{r}\n{}", r.details());
        }
    }

    #[test]
    fn r2_of_a_line_is_one() {
        assert!((linear_fit_r2(&[(1.0, 2.0), (2.0, 4.0), (3.0, 6.0)]) - 1.0).abs() < 1e-15);
        assert!(linear_fit_r2(&[(1.0, 1.0), (2.0, 3.0), (3.0, 1.0)]) < 0.1);
    }

    #[test]
    fn display_names_the_failing_check() {
        let r = CriterionReport {
            id: 9,
            title: "demo",
            checks: vec![Check::at_most("a", 0.5, 1.0), Check::at_most("b", 2.0, 1.0)],
            notes: vec![],
            error: None,
            elapsed: Duration::from_millis(5),
            budget: Duration::from_secs(1),
        };
        let line = r.to_string();
        assert!(line.starts_with("[FAIL] criterion 9: demo: b = 2.000000"), "{line}");
    }

    #[test]
    fn missing_checkpoint_is_reported() {
        let err = checkpoint_probe(Path::new("/nonexistent/ckpt.json")).unwrap_err();
        assert!(err.contains("ckpt.json"));
    }
}
