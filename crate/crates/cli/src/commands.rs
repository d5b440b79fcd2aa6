//! One function per subcommand. Each writes its outputs and a manifest into `out`.

use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use anyhow::Context;
use ltt_core::cfm_trainer::{train as fit, write_loss_csv, TrainOutcome};
use ltt_core::channel::{awgn_sigma, calibration_table};
use ltt_core::data_io::{encode_idx_images, encode_idx_labels, to_bytes, write_csv, Cell, Dataset, IdxImages, Shape};
use ltt_core::pipeline::{evaluate, transmit, ChannelKind};
use ltt_core::student_field::{save_checkpoint, to_json, FieldArchitecture, FieldParams};
use ltt_core::verification::{checkpoint_probe, run_one, CriterionReport, VerifyOptions};
use ltt_core::VelocityField;
use rayon::prelude::*;
use serde_json::json;

use crate::config::{FieldChoice, RunConfig, Source};
use crate::data::{self, Field};
use crate::manifest::{Manifest, ResumableTable};
use crate::{CheckFailed, DataFormat, UsageError};

fn name(path: &Path) -> String {
    path.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn train_field(cfg: &RunConfig, train: &Dataset, out: &Path) -> anyhow::Result<(TrainOutcome, Vec<String>)> {
    let outcome = fit(&cfg.train_config(cfg.seed()), &train.samples)?;
    let loss_path = out.join("loss.csv");
    write_loss_csv(&loss_path, &outcome.history)?;
    if let Some(bad) = outcome.history.iter().find(|r| !r.loss.is_finite()) {
        anyhow::bail!(
            "training diverged: loss is {} at step {} (see {})",
            bad.loss,
            bad.step,
            loss_path.display()
        );
    }
    let ck = out.join("checkpoint.json");
    save_checkpoint(&outcome.params, &ck)?;
    Ok((outcome, vec![name(&ck), name(&loss_path)]))
}

fn loss_summary(outcome: &TrainOutcome) -> serde_json::Value {
    let h = &outcome.history;
    let tail = (h.len() / 10).max(1);
    let mean = |r: &[ltt_core::cfm_trainer::LossRecord]| r.iter().map(|r| r.loss).sum::<f64>() / r.len().max(1) as f64;
    json!({
        "steps": h.len(),
        "parameters": outcome.params.parameter_count(),
        "first_loss": h.first().map(|r| r.loss),
        "mean_loss_first_10pct": mean(&h[..tail.min(h.len())]),
        "mean_loss_last_10pct": mean(&h[h.len().saturating_sub(tail)..]),
    })
}

pub fn train(cfg: &RunConfig, out: &Path) -> anyhow::Result<()> {
    let ds = data::load(&cfg.data, cfg.seed())?;
    let (train_ds, _) = data::split(&ds, cfg.data.holdout);
    log::info!("training on {} samples of dimension {}", train_ds.len(), train_ds.dim());
    let (outcome, outputs) = train_field(cfg, &train_ds, out)?;
    let mut m = Manifest::new("train", cfg);
    m.outputs = outputs;
    m.summary = loss_summary(&outcome);
    m.write(out)?;
    println!("{}", serde_json::to_string(&m.summary)?);
    Ok(())
}

/// Field, training split, evaluation split and signal RMS for decoding commands.
struct Decoding {
    field: Field,
    eval: Dataset,
    signal_rms: f64,
    outputs: Vec<String>,
}

fn prepare(cfg: &RunConfig, out: &Path) -> anyhow::Result<Decoding> {
    let ds = data::load(&cfg.data, cfg.seed())?;
    let (train_ds, eval) = data::split(&ds, cfg.data.holdout);
    let mut outputs = Vec::new();
    let field = match (cfg.decode.field, &cfg.decode.checkpoint) {
        (FieldChoice::Exact, _) => Field::exact(cfg)?,
        (FieldChoice::Trained, Some(path)) => Field::from_checkpoint(path)?,
        (FieldChoice::Trained, None) => {
            log::info!("no checkpoint given; training on {} samples first", train_ds.len());
            let (outcome, files) = train_field(cfg, &train_ds, out)?;
            outputs = files;
            Field::Trained(outcome.params)
        }
    };
    if let Some(d) = field.dim() {
        if d != ds.dim() {
            return Err(UsageError(format!("field expects dimension {d}, dataset has {}", ds.dim())).into());
        }
    }
    let signal_rms = cfg.decode.signal_rms.unwrap_or_else(|| train_ds.signal_rms());
    Ok(Decoding {
        field,
        eval,
        signal_rms,
        outputs,
    })
}

/// Per-entry MMSE for a Gaussian source over AWGN at `snr_db`.
fn gaussian_mmse(cfg: &RunConfig, signal_rms: f64, snr_db: f64) -> Option<f64> {
    (cfg.data.source == Source::Gaussian).then(|| {
        let s0 = cfg.data.std * cfg.data.std;
        let ch = awgn_sigma(signal_rms, snr_db).powi(2);
        s0 * ch / (s0 + ch)
    })
}

pub fn decode(cfg: &RunConfig, out: &Path) -> anyhow::Result<()> {
    let prep = prepare(cfg, out)?;
    let d = &cfg.decode;
    let link = cfg.link(d.channel, d.snr_db, prep.signal_rms);
    let n = d.messages;
    let samples = &prep.eval.samples;
    let results: Vec<_> = (0..n)
        .into_par_iter()
        .map(|i| transmit(&prep.field, &samples[i % samples.len()], &link, i as u64))
        .collect::<Result<_, _>>()?;

    let mut metrics = Vec::with_capacity(n);
    let mut decoded = Vec::with_capacity(n);
    for (i, r) in results.iter().enumerate() {
        metrics.push(vec![
            Cell::from(i),
            Cell::from(i % samples.len()),
            Cell::from(r.mse),
            Cell::from(r.psnr_db),
            Cell::from(r.received_psnr_db),
        ]);
        let mut row = vec![Cell::from(i)];
        row.extend(r.decoded.iter().map(|&v| Cell::from(v)));
        decoded.push(row);
    }
    write_csv(
        &out.join("decode.csv"),
        &["message", "sample", "mse", "psnr_db", "received_psnr_db"],
        &metrics,
    )?;
    let dim = prep.eval.dim();
    let names: Vec<String> = (0..dim).map(|j| format!("x{j}")).collect();
    let mut header = vec!["message"];
    header.extend(names.iter().map(String::as_str));
    write_csv(&out.join("decoded.csv"), &header, &decoded)?;

    let mean = |f: fn(&ltt_core::pipeline::MessageOutcome) -> f64| results.iter().map(f).sum::<f64>() / n as f64;
    let (mse, psnr, rpsnr) = (mean(|r| r.mse), mean(|r| r.psnr_db), mean(|r| r.received_psnr_db));
    let mut m = Manifest::new("decode", cfg);
    m.outputs = prep.outputs;
    m.outputs.extend(["decode.csv".to_string(), "decoded.csv".to_string()]);
    m.summary = json!({
        "channel": d.channel,
        "snr_db": d.snr_db,
        "signal_rms": prep.signal_rms,
        "messages": n,
        "mse": mse,
        "psnr_db": psnr,
        "received_psnr_db": rpsnr,
        "delta_psnr_db": psnr - rpsnr,
        "mmse_bound": if d.channel == ChannelKind::Awgn { gaussian_mmse(cfg, prep.signal_rms, d.snr_db) } else { None },
    });
    m.write(out)?;
    println!("{}", serde_json::to_string(&m.summary)?);
    Ok(())
}

pub fn calibrate(cfg: &RunConfig, out: &Path) -> anyhow::Result<()> {
    let c = &cfg.calibrate;
    if !(c.signal_rms.is_finite() && c.signal_rms > 0.0) {
        return Err(UsageError(format!("calibrate.signal_rms must be positive, got {}", c.signal_rms)).into());
    }
    let rows = calibration_table(c.signal_rms, &c.snr_db, &cfg.schedule());
    let opt = |v: Option<f64>| v.map(Cell::Float).unwrap_or_else(|| Cell::Text(String::new()));
    let cells: Vec<Vec<Cell>> = rows
        .iter()
        .map(|r| {
            let status = match r.t_star {
                Some(_) => "ok".to_string(),
                None => format!("error: sigma_ch exceeds sigma_max {}", cfg.sigma_max),
            };
            vec![
                Cell::Float(r.snr_db),
                Cell::Float(r.sigma_ch),
                opt(r.t_star),
                opt(r.t_star_reversed),
                Cell::Text(status),
            ]
        })
        .collect();
    write_csv(
        &out.join("calibrate.csv"),
        &["snr_db", "sigma_ch", "t_star", "t_star_reversed", "status"],
        &cells,
    )?;
    println!("{:>8} {:>10} {:>8} {:>10}", "SNR dB", "sigma_ch", "t*", "1 - t*");
    for r in &rows {
        match (r.t_star, r.t_star_reversed) {
            (Some(t), Some(tr)) => println!("{:>8} {:>10.5} {:>8.4} {:>10.4}", r.snr_db, r.sigma_ch, t, tr),
            _ => println!("{:>8} {:>10.5}   outside the schedule", r.snr_db, r.sigma_ch),
        }
    }
    let mut m = Manifest::new("calibrate", cfg);
    m.outputs = vec!["calibrate.csv".into()];
    m.summary = json!({ "rows": rows.len(), "errors": rows.iter().filter(|r| r.t_star.is_none()).count() });
    m.write(out)?;
    Ok(())
}

/// Start or resume a table: finished rows are reused only when the previous
/// run in `out` had the same configuration hash.
fn open_table(
    manifest: &Manifest,
    out: &Path,
    file: &str,
    header: Vec<&'static str>,
    keys: Vec<Vec<Cell>>,
) -> anyhow::Result<ResumableTable> {
    let path = out.join(file);
    let mut table = ResumableTable::new(path.clone(), header, keys[0].len(), keys);
    match Manifest::read(out) {
        Some(prev) if prev.config_hash == manifest.config_hash => {
            let reused = table.resume()?;
            if reused > 0 {
                log::info!("resuming {}: {reused} finished rows kept", path.display());
            }
        }
        _ => {}
    }
    table.flush()?;
    Ok(table)
}

fn error_row(key: Vec<Cell>, width: usize, err: &dyn std::fmt::Display) -> Vec<Cell> {
    let mut row = key;
    row.resize(width - 1, Cell::Text(String::new()));
    row.push(Cell::Text(err.to_string()));
    row
}

pub fn sweep_snr(cfg: &RunConfig, out: &Path) -> anyhow::Result<()> {
    let prep = prepare(cfg, out)?;
    let s = &cfg.sweep_snr;
    let plan: Vec<(ChannelKind, f64)> = s
        .channels
        .iter()
        .flat_map(|&c| s.snr_db.iter().map(move |&snr| (c, snr)))
        .collect();
    if plan.is_empty() {
        return Err(UsageError("sweep_snr needs at least one channel and one SNR".into()).into());
    }
    let header = vec![
        "channel",
        "snr_db",
        "messages",
        "mse",
        "psnr_db",
        "received_psnr_db",
        "delta_psnr_db",
        "error",
    ];
    let width = header.len();
    let keys = plan
        .iter()
        .map(|&(c, snr)| vec![Cell::Text(c.to_string()), Cell::Float(snr)])
        .collect();
    let mut m = Manifest::new("sweep-snr", cfg);
    m.outputs = prep.outputs.clone();
    m.outputs.push("sweep_snr.csv".into());
    let table = open_table(&m, out, "sweep_snr.csv", header, keys)?;
    m.write(out)?;

    let pending = table.pending();
    let table = Mutex::new(table);
    pending.par_iter().try_for_each(|&i| -> anyhow::Result<()> {
        let (channel, snr) = plan[i];
        let key = vec![Cell::Text(channel.to_string()), Cell::Float(snr)];
        let link = cfg.link(channel, snr, prep.signal_rms);
        let row = match evaluate(&prep.field, &prep.eval.samples, s.messages, &link) {
            Ok(p) => {
                let mut row = key;
                row.extend([
                    Cell::from(p.messages),
                    Cell::from(p.mse),
                    Cell::from(p.psnr_db),
                    Cell::from(p.received_psnr_db),
                    Cell::from(p.delta_psnr_db),
                    Cell::Text(String::new()),
                ]);
                log::info!(
                    "{channel} {snr} dB: PSNR {:.3} dB, delta {:+.3} dB",
                    p.psnr_db,
                    p.delta_psnr_db
                );
                row
            }
            Err(e) => {
                log::warn!("{channel} {snr} dB: {e}");
                error_row(key, width, &e)
            }
        };
        table.lock().expect("table lock").set(i, row)
    })?;

    let table = table.into_inner().expect("table lock");
    let failed = table.rows().filter(|r| !r[width - 1].render().is_empty()).count();
    m.summary =
        json!({ "rows": plan.len(), "computed": pending.len(), "failed": failed, "signal_rms": prep.signal_rms });
    m.write(out)?;
    print_table(&table);
    if failed > 0 {
        log::warn!("{failed} of {} rows failed; see the error column", plan.len());
    }
    Ok(())
}

fn print_table(table: &ResumableTable) {
    for row in table.rows() {
        let cells: Vec<String> = row
            .iter()
            .map(|c| match c.render().parse::<f64>() {
                Ok(v) if v.fract() == 0.0 && v.abs() < 1e15 => format!("{v}"),
                Ok(v) if v.abs() < 1e-3 => format!("{v:.3e}"),
                Ok(v) => format!("{v:.4}"),
                Err(_) => c.render(),
            })
            .collect();
        println!("{}", cells.join("\t"));
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Least-squares line through `(x, y)`: slope, intercept, R².
pub fn linear_fit(points: &[(f64, f64)]) -> Option<(f64, f64, f64)> {
    let n = points.len() as f64;
    if points.len() < 2 {
        return None;
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some((slope, my - slope * mx, r2))
}

/// Rows run one at a time so that latencies are not skewed by sibling work.
pub fn sweep_steps(cfg: &RunConfig, out: &Path) -> anyhow::Result<()> {
    let prep = prepare(cfg, out)?;
    let s = &cfg.sweep_steps;
    if s.steps.is_empty() {
        return Err(UsageError("sweep_steps.steps is empty".into()).into());
    }
    let header = vec![
        "steps",
        "solver",
        "channel",
        "snr_db",
        "messages",
        "mse",
        "psnr_db",
        "seconds_per_sample",
        "error",
    ];
    let width = header.len();
    let keys = s.steps.iter().map(|&n| vec![Cell::from(n)]).collect();
    let mut m = Manifest::new("sweep-steps", cfg);
    m.outputs = prep.outputs.clone();
    m.outputs.push("sweep_steps.csv".into());
    let mut table = open_table(&m, out, "sweep_steps.csv", header, keys)?;
    m.write(out)?;

    for i in table.pending() {
        let n = s.steps[i];
        let link = ltt_core::pipeline::LinkConfig {
            steps: n,
            ..cfg.link(s.channel, s.snr_db, prep.signal_rms)
        };
        let samples = &prep.eval.samples;
        let mut latencies = Vec::with_capacity(s.messages);
        let (mut mse, mut psnr) = (0.0, 0.0);
        let mut failure = None;
        for k in 0..s.messages {
            let start = Instant::now();
            match transmit(&prep.field, &samples[k % samples.len()], &link, k as u64) {
                Ok(r) => {
                    latencies.push(start.elapsed().as_secs_f64());
                    mse += r.mse;
                    psnr += r.psnr_db;
                }
                Err(e) => {
                    failure = Some(e);
                    break;
                }
            }
        }
        let key = vec![Cell::from(n)];
        let row = match failure {
            Some(e) => {
                log::warn!("N = {n}: {e}");
                error_row(key, width, &e)
            }
            None => {
                let k = s.messages as f64;
                let lat = median(latencies);
                log::info!("N = {n}: PSNR {:.3} dB, {:.3e} s per sample", psnr / k, lat);
                let mut row = key;
                row.extend([
                    Cell::Text(link.solver.to_string()),
                    Cell::Text(s.channel.to_string()),
                    Cell::Float(s.snr_db),
                    Cell::from(s.messages),
                    Cell::Float(mse / k),
                    Cell::Float(psnr / k),
                    Cell::Float(lat),
                    Cell::Text(String::new()),
                ]);
                row
            }
        };
        table.set(i, row)?;
    }

    let points: Vec<(f64, f64)> = table
        .rows()
        .filter(|r| r[width - 1].render().is_empty())
        .filter_map(|r| Some((r[0].render().parse().ok()?, r[7].render().parse().ok()?)))
        .collect();
    let fit = linear_fit(&points);
    m.summary = json!({
        "rows": s.steps.len(),
        "latency_slope_seconds_per_step": fit.map(|f| f.0),
        "latency_intercept_seconds": fit.map(|f| f.1),
        "latency_r2": fit.map(|f| f.2),
    });
    m.write(out)?;
    print_table(&table);
    if let Some((slope, _, r2)) = fit {
        println!("latency fit: {slope:.3e} s per step, R^2 = {r2:.4}");
    }
    Ok(())
}

/// A checkpoint cut off halfway through, used to confirm load failures are reported.
fn corrupted_fixture(out: &Path) -> anyhow::Result<PathBuf> {
    let arch = FieldArchitecture::new(2, vec![4], 2)?;
    let text = to_json(&FieldParams::init(arch, 0)?);
    let path = out.join("corrupted_checkpoint.json");
    std::fs::write(&path, &text.as_bytes()[..text.len() / 2]).with_context(|| path.display().to_string())?;
    Ok(path)
}

fn report_rows(r: &CriterionReport) -> Vec<Vec<Cell>> {
    let head = |check: &str, value: Cell, tol: &str, ok: bool, required: bool| {
        vec![
            Cell::Int(i64::from(r.id)),
            Cell::Text(r.title.to_string()),
            Cell::Text(if r.passed() { "pass" } else { "fail" }.into()),
            Cell::Text(check.to_string()),
            value,
            Cell::Text(tol.to_string()),
            Cell::Text(ok.to_string()),
            Cell::Text(required.to_string()),
            Cell::Float(r.elapsed.as_secs_f64()),
        ]
    };
    let mut rows: Vec<Vec<Cell>> = r
        .checks
        .iter()
        .map(|c| head(&c.label, Cell::Float(c.value), &c.tolerance, c.ok, c.required))
        .collect();
    if let Some(e) = &r.error {
        rows.push(head(&format!("error: {e}"), Cell::Text(String::new()), "", false, true));
    }
    rows.push(head(
        "runtime (s)",
        Cell::Float(r.elapsed.as_secs_f64()),
        &format!("<= {}", r.budget.as_secs_f64()),
        r.within_budget(),
        true,
    ));
    rows
}

pub fn verify(cfg: &RunConfig, out: &Path, ids: &[u8], probes: &[PathBuf]) -> anyhow::Result<()> {
    let dir = cfg.data.path.clone().unwrap_or_else(ltt_core::bundled_data_dir);
    let mut opts = VerifyOptions::new(dir);
    if let Some(seed) = cfg.seed {
        opts.seed = seed;
        opts.fidelity.seed = seed;
        opts.images.seed = seed;
    }
    if let Some(bad) = ids.iter().find(|&&id| !ltt_core::verification::CRITERIA.contains(&id)) {
        return Err(UsageError(format!("no criterion {bad}; ids run from 1 to 8")).into());
    }

    let mut failures = Vec::new();
    let fixture = corrupted_fixture(out)?;
    match checkpoint_probe(&fixture) {
        Err(e) => println!("[PASS] corrupted checkpoint rejected: {e}"),
        Ok(msg) => {
            println!("[FAIL] corrupted checkpoint loaded: {msg}");
            failures.push("corrupted checkpoint fixture".to_string());
        }
    }
    for p in probes {
        match checkpoint_probe(p) {
            Ok(msg) => println!("[PASS] checkpoint loads: {msg}"),
            Err(e) => {
                println!("[FAIL] checkpoint does not load: {e}");
                failures.push(format!("checkpoint {}", p.display()));
            }
        }
    }

    let header = vec![
        "criterion",
        "title",
        "verdict",
        "check",
        "value",
        "tolerance",
        "ok",
        "required",
        "elapsed_s",
    ];
    let mut rows = Vec::new();
    let mut verdicts = Vec::new();
    for &id in ids {
        let r = run_one(id, &opts).expect("id checked above");
        println!("{r}");
        print!("{}", r.details());
        rows.extend(report_rows(&r));
        write_csv(&out.join("verify.csv"), &header, &rows)?;
        verdicts.push(json!({ "criterion": id, "passed": r.passed(), "elapsed_s": r.elapsed.as_secs_f64() }));
        if !r.passed() {
            failures.push(format!("criterion {id}"));
        }
    }
    if ids.is_empty() {
        write_csv(&out.join("verify.csv"), &header, &rows)?;
    }

    let mut m = Manifest::new("verify", cfg);
    m.outputs = vec!["verify.csv".into(), name(&fixture)];
    m.summary = json!({ "criteria": verdicts, "failures": failures });
    m.write(out)?;
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CheckFailed(format!("failed: {}", failures.join(", "))).into())
    }
}

pub fn gen_data(cfg: &RunConfig, out: &Path, format: DataFormat) -> anyhow::Result<()> {
    let ds = data::load(&cfg.data, cfg.seed())?;
    let outputs = match format {
        DataFormat::Csv => {
            let names: Vec<String> = (0..ds.dim()).map(|j| format!("x{j}")).collect();
            let header: Vec<&str> = names.iter().map(String::as_str).collect();
            let rows: Vec<Vec<Cell>> = ds
                .samples
                .iter()
                .map(|s| s.iter().map(|&v| Cell::Float(v)).collect())
                .collect();
            write_csv(&out.join("data.csv"), &header, &rows)?;
            vec!["data.csv".to_string()]
        }
        DataFormat::Idx => {
            let (rows, cols) = match ds.shape {
                Shape::Image {
                    channels: 1,
                    height,
                    width,
                } => (height, width),
                _ => return Err(UsageError("IDX output needs a single-channel image dataset".into()).into()),
            };
            let images = IdxImages {
                count: ds.len(),
                rows,
                cols,
                pixels: ds.samples.iter().flat_map(|s| to_bytes(s)).collect(),
            };
            std::fs::write(out.join("images.idx3-ubyte"), encode_idx_images(&images))?;
            let mut files = vec!["images.idx3-ubyte".to_string()];
            if let Some(labels) = &ds.labels {
                std::fs::write(out.join("labels.idx1-ubyte"), encode_idx_labels(labels))?;
                files.push("labels.idx1-ubyte".into());
            }
            files
        }
    };
    let mut m = Manifest::new("gen-data", cfg);
    m.outputs = outputs;
    m.summary = json!({ "name": ds.name, "samples": ds.len(), "dim": ds.dim(), "signal_rms": ds.signal_rms() });
    m.write(out)?;
    println!("{}", serde_json::to_string(&m.summary)?);
    Ok(())
}
