use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ltt_core::data_io::{parse_float, read_csv};
use ltt_core::verification::LANDING_TABLE;
use serde_json::Value;

fn ltt(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ltt"))
        .current_dir(dir)
        .args(args)
        .env("RUST_LOG", "info")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = ltt(dir, args);
    assert!(
        out.status.success(),
        "ltt {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn column(path: &Path, name: &str) -> Vec<f64> {
    let (header, rows) = read_csv(path).unwrap();
    let j = header.iter().position(|h| h == name).unwrap();
    rows.iter().map(|r| parse_float(&r[j]).unwrap()).collect()
}

const GAUSSIAN: &str = "seed = 5\n[data]\nn = 3000\n[train]\nepochs = 8\n";

#[test]
fn train_writes_checkpoint_loss_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write(d, "g.toml", GAUSSIAN);
    ok(d, &["--config", "g.toml", "--out", "a", "train"]);
    for f in ["checkpoint.json", "loss.csv", "manifest.json"] {
        assert!(d.join("a").join(f).exists(), "{f}");
    }
    let loss = column(&d.join("a/loss.csv"), "loss");
    let k = loss.len() / 5;
    let head: f64 = loss[..k].iter().sum::<f64>() / k as f64;
    let tail: f64 = loss[loss.len() - k..].iter().sum::<f64>() / k as f64;
    assert!(tail < head, "loss did not trend down: {head} -> {tail}");

    let m = manifest(&d.join("a"));
    assert_eq!(m["command"], "train");
    assert_eq!(m["seed"], 5);
    assert_eq!(m["config"]["train"]["epochs"], 8);
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(m["version"], env!("CARGO_PKG_VERSION"));
}

#[test]
fn same_seed_gives_identical_loss_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write(d, "g.toml", GAUSSIAN);
    ok(d, &["--config", "g.toml", "--out", "a", "train"]);
    ok(d, &["--config", "g.toml", "--out", "b", "train"]);
    ok(d, &["--config", "g.toml", "--out", "c", "--seed", "6", "train"]);
    let read = |s: &str| fs::read(d.join(s).join("loss.csv")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
    assert_eq!(manifest(&d.join("c"))["seed"], 6);
}

#[test]
fn usage_errors_exit_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write(d, "idx.toml", "[data]\nsource = \"idx\"\npath = \"missing.idx\"\n");
    write(d, "typo.toml", "[train]\nepoch = 3\n");
    let cases: &[&[&str]] = &[
        &["--config", "idx.toml", "train"],
        &["--config", "typo.toml", "train"],
        &["--config", "nowhere.toml", "train"],
        &["--channel", "fiber", "decode"],
        &["--steps", "5", "calibrate"],
        &["--snr", "1,x", "calibrate"],
        &["verify", "--only", "12"],
        &["--checkpoint", "none.json", "decode"],
    ];
    for args in cases {
        let out = ltt(d, args);
        assert_eq!(
            out.status.code(),
            Some(2),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
}

#[test]
fn calibrate_reproduces_the_landing_table() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["--out", "c", "calibrate"]);
    let rev = column(&d.join("c/calibrate.csv"), "t_star_reversed");
    let snr = column(&d.join("c/calibrate.csv"), "snr_db");
    assert_eq!(rev.len(), LANDING_TABLE.len());
    for ((s, r), (ts, tr)) in snr.iter().zip(&rev).zip(LANDING_TABLE) {
        assert_eq!(*s, ts);
        assert!((r - tr).abs() <= 1e-3, "{s} dB: {r} vs {tr}");
    }
    assert_eq!(manifest(&d.join("c"))["command"], "calibrate");
}

#[test]
fn calibrate_flags_rows_outside_the_schedule() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write(d, "c.toml", "[calibrate]\nsignal_rms = 1.5\nsnr_db = [0.0, 10.0]\n");
    ok(d, &["--config", "c.toml", "--out", "c", "calibrate"]);
    let (_, rows) = read_csv(&d.join("c/calibrate.csv")).unwrap();
    assert!(rows[0][4].starts_with("error"), "{:?}", rows[0]);
    assert_eq!(rows[0][2], "");
    assert_eq!(rows[1][4], "ok");
    assert_eq!(manifest(&d.join("c"))["summary"]["errors"], 1);
}

#[test]
fn trained_gaussian_awgn_row_is_near_the_mmse_bound() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write(
        d,
        "g.toml",
        "seed = 2\n[data]\nn = 10000\nholdout = 0.5\n[train]\nepochs = 40\n\
         [decode]\nsignal_rms = 1.0\n[sweep_snr]\nmessages = 5000\n",
    );
    ok(d, &["--config", "g.toml", "--out", "t", "train"]);
    ok(
        d,
        &[
            "--config",
            "g.toml",
            "--out",
            "s",
            "--checkpoint",
            "t/checkpoint.json",
            "--channel",
            "awgn",
            "--snr",
            "10",
            "sweep-snr",
        ],
    );
    let mse = column(&d.join("s/sweep_snr.csv"), "mse")[0];
    let ch = 0.1;
    let bound = ch / (1.0 + ch);
    assert!((mse - bound).abs() <= 0.1 * bound, "mse {mse} vs bound {bound}");
}

#[test]
fn sweep_snr_resumes_rows_with_a_matching_hash() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write(
        d,
        "x.toml",
        "[data]\nn = 400\n[decode]\nfield = \"exact\"\n[sweep_snr]\nmessages = 20\nsnr_db = [0.0, 10.0]\n",
    );
    let args = ["--config", "x.toml", "--out", "s", "sweep-snr"];
    ok(d, &args);
    let csv = d.join("s/sweep_snr.csv");
    let first = fs::read_to_string(&csv).unwrap();
    assert_eq!(first.lines().count(), 7);
    assert_eq!(manifest(&d.join("s"))["summary"]["computed"], 6);

    // Drop one row: only that row is recomputed, and it comes back identical.
    let lines: Vec<&str> = first.lines().collect();
    let trimmed: String = lines
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != 3)
        .map(|(_, l)| format!("{l}\n"))
        .collect();
    fs::write(&csv, trimmed).unwrap();
    let out = ok(d, &args);
    assert!(String::from_utf8_lossy(&out.stderr).contains("5 finished rows kept"));
    assert_eq!(manifest(&d.join("s"))["summary"]["computed"], 1);
    assert_eq!(fs::read_to_string(&csv).unwrap(), first);

    // A different configuration starts over.
    ok(d, &["--config", "x.toml", "--out", "s", "--seed", "9", "sweep-snr"]);
    assert_eq!(manifest(&d.join("s"))["summary"]["computed"], 6);
    assert_ne!(fs::read_to_string(&csv).unwrap(), first);
}

#[test]
fn sweep_steps_reports_latency_per_step_count() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write(d, "g.toml", "[data]\nn = 2000\nmean = [0.0, 0.0, 0.0, 0.0]\n[train]\nepochs = 2\nhidden_dims = [128, 128]\n[sweep_steps]\nmessages = 40\n");
    ok(d, &["--config", "g.toml", "--out", "t", "train"]);
    ok(
        d,
        &[
            "--config",
            "g.toml",
            "--out",
            "s",
            "--checkpoint",
            "t/checkpoint.json",
            "--steps",
            "1,5,20,40",
            "sweep-steps",
        ],
    );
    let csv = d.join("s/sweep_steps.csv");
    assert_eq!(column(&csv, "steps"), vec![1.0, 5.0, 20.0, 40.0]);
    let lat = column(&csv, "seconds_per_sample");
    assert!(lat.iter().all(|&t| t > 0.0));
    assert!(lat[3] > lat[0]);
    assert!(manifest(&d.join("s"))["summary"]["latency_r2"].as_f64().is_some());
}

#[test]
fn decode_is_deterministic_and_records_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write(
        d,
        "x.toml",
        "[data]\nn = 500\n[decode]\nfield = \"exact\"\nmessages = 50\n",
    );
    for ch in ["awgn", "rayleigh", "mimo"] {
        ok(d, &["--config", "x.toml", "--out", "a", "--channel", ch, "decode"]);
        ok(d, &["--config", "x.toml", "--out", "b", "--channel", ch, "decode"]);
        let read = |s: &str| fs::read(d.join(s).join("decoded.csv")).unwrap();
        assert_eq!(read("a"), read("b"), "{ch}");
    }
    let m = manifest(&d.join("a"));
    assert_eq!(m["summary"]["channel"], "mimo");
    assert_eq!(m["outputs"], serde_json::json!(["decode.csv", "decoded.csv"]));
}

#[test]
fn verify_prints_criteria_and_reports_bad_checkpoints() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let out = ok(d, &["--out", "v", "verify", "--only", "2,7"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("[PASS] corrupted checkpoint rejected"));
    assert!(text.contains("[PASS] criterion 2"));
    assert!(text.contains("[PASS] criterion 7"));
    assert!(text.contains("vs <= 1e-3"));
    let (_, rows) = read_csv(&d.join("v/verify.csv")).unwrap();
    assert!(rows.iter().any(|r| r[0] == "7" && r[3] == "max relative error"));

    write(d, "bad.json", "{\"version\": 1, \"architecture\": ");
    let out = ltt(d, &["--out", "w", "verify", "--only", "6", "--probe", "bad.json"]);
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("[FAIL] checkpoint does not load"));
    assert!(
        text.contains("[PASS] criterion 6"),
        "suite continues after a bad checkpoint"
    );
}

#[test]
fn gen_data_round_trips_through_csv_and_idx() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write(d, "g.toml", "seed = 4\n[data]\nn = 50\nmean = [1.0, -1.0]\nstd = 0.5\n");
    ok(d, &["--config", "g.toml", "--out", "g", "gen-data"]);
    write(d, "c.toml", "[data]\nsource = \"csv\"\npath = \"g/data.csv\"\n");
    ok(d, &["--config", "c.toml", "--out", "g2", "gen-data"]);
    assert_eq!(
        fs::read(d.join("g/data.csv")).unwrap(),
        fs::read(d.join("g2/data.csv")).unwrap()
    );

    write(d, "m.toml", "[data]\nsource = \"mnist\"\nlimit = 20\n");
    ok(d, &["--config", "m.toml", "--out", "m", "gen-data", "--format", "idx"]);
    write(
        d,
        "i.toml",
        "[data]\nsource = \"idx\"\npath = \"m/images.idx3-ubyte\"\nlabels = \"m/labels.idx1-ubyte\"\n",
    );
    ok(d, &["--config", "i.toml", "--out", "m2", "gen-data", "--format", "idx"]);
    assert_eq!(
        fs::read(d.join("m/images.idx3-ubyte")).unwrap(),
        fs::read(d.join("m2/images.idx3-ubyte")).unwrap()
    );
    assert_eq!(manifest(&d.join("m2"))["summary"]["dim"], 64);

    let out = ltt(d, &["--config", "g.toml", "--out", "g3", "gen-data", "--format", "idx"]);
    assert_eq!(out.status.code(), Some(2));
}
