//! `ltt`: train velocity fields, decode channel observations, build landing-time
//! tables, run SNR and step-count sweeps, and run the self-check suite.
//!
//! Every command writes its outputs and a `manifest.json` into `--out`.

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ltt_core::pipeline::ChannelKind;
use ltt_core::Solver;

pub mod commands;
pub mod config;
pub mod data;
pub mod manifest;

use config::{parse_list, Overrides, RunConfig, Target};

/// Bad invocation: unknown keys, missing inputs, conflicting flags. Exit code 2.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// The command ran, but a check it performs did not pass. Exit code 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckFailed(pub String);

impl fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for CheckFailed {}

/// Exit status for an error returned by [`run`].
pub fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        2
    } else {
        1
    }
}

#[derive(Debug, Parser)]
#[command(name = "ltt", version, about = "Land-then-transport generative decoding")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Output directory [default: runs/<command>].
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Comma-separated SNR values in dB.
    #[arg(long, global = true, value_name = "LIST")]
    pub snr: Option<String>,
    /// Comma-separated ODE step counts.
    #[arg(long, global = true, value_name = "LIST")]
    pub steps: Option<String>,
    #[arg(long, global = true, value_parser = parse_channel)]
    pub channel: Option<ChannelKind>,
    #[arg(long, global = true, value_parser = parse_solver)]
    pub solver: Option<Solver>,
    /// Zero-forcing scaling after MMSE equalization.
    #[arg(long, global = true)]
    pub debias: bool,
    /// Redraw the fading channel for every channel use.
    #[arg(long, global = true)]
    pub fast_fading: bool,
    /// Student field checkpoint to decode with.
    #[arg(long, global = true, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    /// Dataset path (IDX images file, MNIST directory or CSV file).
    #[arg(long, global = true, value_name = "PATH")]
    pub data: Option<PathBuf>,
    /// More log output; repeat for debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DataFormat {
    Csv,
    Idx,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a student field with conditional flow matching.
    Train,
    /// Send held-out samples through one channel and decode them.
    Decode,
    /// Landing times for a list of SNRs.
    Calibrate,
    /// Decoding quality over channels and SNRs.
    SweepSnr,
    /// Decoding quality and latency over ODE step counts.
    SweepSteps,
    /// Run the self-check suite.
    Verify {
        /// Comma-separated criterion ids; all when omitted.
        #[arg(long, value_name = "LIST")]
        only: Option<String>,
        /// Also try to load these checkpoints.
        #[arg(long, value_name = "PATH")]
        probe: Vec<PathBuf>,
    },
    /// Write the configured dataset to disk.
    GenData {
        #[arg(long, value_enum, default_value_t = DataFormat::Csv)]
        format: DataFormat,
    },
}

impl Command {
    pub fn target(&self) -> Target {
        match self {
            Command::Train => Target::Train,
            Command::Decode => Target::Decode,
            Command::Calibrate => Target::Calibrate,
            Command::SweepSnr => Target::SweepSnr,
            Command::SweepSteps => Target::SweepSteps,
            Command::Verify { .. } => Target::Verify,
            Command::GenData { .. } => Target::GenData,
        }
    }
}

fn parse_channel(s: &str) -> Result<ChannelKind, String> {
    s.parse().map_err(|e: ltt_core::Error| e.to_string())
}

fn parse_solver(s: &str) -> Result<Solver, String> {
    s.parse().map_err(|e: ltt_core::Error| e.to_string())
}

fn flag_list<T: std::str::FromStr>(flag: &str, v: &Option<String>) -> Result<Option<Vec<T>>, UsageError>
where
    T::Err: fmt::Display,
{
    v.as_deref()
        .map(|s| parse_list(s).map_err(|e| UsageError(format!("--{flag}: {e}"))))
        .transpose()
}

impl GlobalArgs {
    pub fn overrides(&self) -> Result<Overrides, UsageError> {
        Ok(Overrides {
            seed: self.seed,
            snr: flag_list("snr", &self.snr)?,
            steps: flag_list("steps", &self.steps)?,
            channel: self.channel,
            solver: self.solver,
            debias: self.debias,
            fast_fading: self.fast_fading,
            checkpoint: self.checkpoint.clone(),
            data: self.data.clone(),
        })
    }
}

/// Resolve the configuration (flags over file over defaults) and run.
pub fn run(cli: &Cli) -> anyhow::Result<()> {
    let target = cli.command.target();
    let mut cfg = match &cli.global.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.apply(target, &cli.global.overrides()?)?;
    let out = cli
        .global
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(target.name()));
    std::fs::create_dir_all(&out).map_err(|e| UsageError(format!("{}: {e}", out.display())))?;
    match &cli.command {
        Command::Train => commands::train(&cfg, &out),
        Command::Decode => commands::decode(&cfg, &out),
        Command::Calibrate => commands::calibrate(&cfg, &out),
        Command::SweepSnr => commands::sweep_snr(&cfg, &out),
        Command::SweepSteps => commands::sweep_steps(&cfg, &out),
        Command::Verify { only, probe } => {
            let ids = match only {
                Some(s) => parse_list(s).map_err(|e| UsageError(format!("--only: {e}")))?,
                None => ltt_core::verification::CRITERIA.collect(),
            };
            commands::verify(&cfg, &out, &ids, probe)
        }
        Command::GenData { format } => commands::gen_data(&cfg, &out, *format),
    }
}
