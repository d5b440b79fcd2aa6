//! Run configuration: a TOML file, overridden by command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use ltt_core::cfm_trainer::TrainConfig;
use ltt_core::channel::FadingOptions;
use ltt_core::data_io::GmmComponent;
use ltt_core::pipeline::{ChannelKind, LinkConfig};
use ltt_core::{NoiseSchedule, Solver};
use serde::{Deserialize, Serialize};

use crate::UsageError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds data synthesis, training and the channel; 0 when unset.
    pub seed: Option<u64>,
    /// Noise level of the prior end of the flow path.
    pub sigma_max: f64,
    pub data: DataConfig,
    pub train: TrainSection,
    pub decode: DecodeSection,
    pub calibrate: CalibrateSection,
    pub sweep_snr: SweepSnrSection,
    pub sweep_steps: SweepStepsSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            sigma_max: 1.0,
            data: DataConfig::default(),
            train: TrainSection::default(),
            decode: DecodeSection::default(),
            calibrate: CalibrateSection::default(),
            sweep_snr: SweepSnrSection::default(),
            sweep_steps: SweepStepsSection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    /// Isotropic Gaussian, `N(mean, std² I)`.
    Gaussian,
    /// Isotropic Gaussian mixture.
    Gmm,
    /// IDX image file, optionally cropped and pooled.
    Idx,
    /// The bundled MNIST subset (or an IDX directory laid out the same way) at 8x8.
    Mnist,
    /// Rows of floats with a header line, as written by `gen-data`.
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: Source,
    /// Images file for `idx`, directory for `mnist`, file for `csv`.
    pub path: Option<PathBuf>,
    /// Labels file for `idx`.
    pub labels: Option<PathBuf>,
    /// Central crop `[height, width]` for `idx`.
    pub crop: Option<[usize; 2]>,
    /// Box-pooling factor for `idx`.
    pub downsample: usize,
    /// Keep at most this many samples after loading.
    pub limit: Option<usize>,
    /// Sample count for synthetic sources.
    pub n: usize,
    pub mean: Vec<f64>,
    pub std: f64,
    pub components: Vec<GmmComponent>,
    /// Fraction of samples held out for decoding and sweeps.
    pub holdout: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: Source::Gaussian,
            path: None,
            labels: None,
            crop: None,
            downsample: 1,
            limit: None,
            n: 20_000,
            mean: vec![0.0],
            std: 1.0,
            components: Vec::new(),
            holdout: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub final_learning_rate: Option<f64>,
    pub hidden_dims: Vec<usize>,
    pub time_features: usize,
    pub log_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let base = TrainConfig::default();
        TrainSection {
            epochs: 30,
            batch_size: 256,
            learning_rate: 2e-3,
            final_learning_rate: Some(1e-5),
            hidden_dims: base.hidden_dims,
            time_features: base.time_features,
            log_every: base.log_every,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldChoice {
    /// A checkpoint, or a field trained at the start of the run.
    Trained,
    /// The closed-form marginal field of a Gaussian or mixture source.
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeSection {
    pub field: FieldChoice,
    pub checkpoint: Option<PathBuf>,
    pub channel: ChannelKind,
    pub snr_db: f64,
    pub solver: Solver,
    pub steps: usize,
    pub clamp: bool,
    pub peak: f64,
    /// `[N_r, N_t]`.
    pub mimo: [usize; 2],
    pub debias: bool,
    pub fast_fading: bool,
    /// Defaults to the RMS of the training split.
    pub signal_rms: Option<f64>,
    pub messages: usize,
}

impl Default for DecodeSection {
    fn default() -> Self {
        DecodeSection {
            field: FieldChoice::Trained,
            checkpoint: None,
            channel: ChannelKind::Awgn,
            snr_db: 10.0,
            solver: Solver::Midpoint,
            steps: 10,
            clamp: false,
            peak: 1.0,
            mimo: [2, 2],
            debias: false,
            fast_fading: false,
            signal_rms: None,
            messages: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrateSection {
    pub signal_rms: f64,
    pub snr_db: Vec<f64>,
}

impl Default for CalibrateSection {
    fn default() -> Self {
        CalibrateSection {
            signal_rms: 0.463,
            snr_db: vec![0.0, 3.0, 5.0, 7.0, 10.0, 12.0, 15.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSnrSection {
    pub channels: Vec<ChannelKind>,
    pub snr_db: Vec<f64>,
    pub messages: usize,
}

impl Default for SweepSnrSection {
    fn default() -> Self {
        SweepSnrSection {
            channels: ChannelKind::ALL.to_vec(),
            snr_db: vec![0.0, 3.0, 5.0, 10.0, 15.0],
            messages: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepStepsSection {
    pub steps: Vec<usize>,
    pub channel: ChannelKind,
    pub snr_db: f64,
    pub messages: usize,
}

impl Default for SweepStepsSection {
    fn default() -> Self {
        SweepStepsSection {
            steps: vec![2, 5, 10, 20, 50],
            channel: ChannelKind::Awgn,
            snr_db: 10.0,
            messages: 64,
        }
    }
}

/// Values given on the command line; `None` leaves the file or default value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub snr: Option<Vec<f64>>,
    pub steps: Option<Vec<usize>>,
    pub channel: Option<ChannelKind>,
    pub solver: Option<Solver>,
    pub debias: bool,
    pub fast_fading: bool,
    pub checkpoint: Option<PathBuf>,
    pub data: Option<PathBuf>,
}

/// The subcommand a configuration is resolved for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Train,
    Decode,
    Calibrate,
    SweepSnr,
    SweepSteps,
    Verify,
    GenData,
}

impl Target {
    pub fn name(self) -> &'static str {
        match self {
            Target::Train => "train",
            Target::Decode => "decode",
            Target::Calibrate => "calibrate",
            Target::SweepSnr => "sweep-snr",
            Target::SweepSteps => "sweep-steps",
            Target::Verify => "verify",
            Target::GenData => "gen-data",
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, UsageError> {
        toml::from_str(text).map_err(|e| UsageError(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, UsageError> {
        let text = fs::read_to_string(path).map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| UsageError(format!("{}: {}", path.display(), e.0)))
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn schedule(&self) -> NoiseSchedule {
        NoiseSchedule::linear(self.sigma_max)
    }

    /// Apply flags for `target`. Flags that mean nothing to it are rejected.
    pub fn apply(&mut self, target: Target, o: &Overrides) -> Result<(), UsageError> {
        let reject = |flag: &str| UsageError(format!("{flag} does not apply to {}", target.name()));
        let single = |flag: &str, n: usize| {
            if n == 1 {
                Ok(())
            } else {
                Err(UsageError(format!("{} takes a single {flag} value", target.name())))
            }
        };
        if o.seed.is_some() {
            self.seed = o.seed;
        }
        if let Some(snr) = &o.snr {
            match target {
                Target::Decode => {
                    single("--snr", snr.len())?;
                    self.decode.snr_db = snr[0];
                }
                Target::SweepSteps => {
                    single("--snr", snr.len())?;
                    self.sweep_steps.snr_db = snr[0];
                }
                Target::Calibrate => self.calibrate.snr_db = snr.clone(),
                Target::SweepSnr => self.sweep_snr.snr_db = snr.clone(),
                _ => return Err(reject("--snr")),
            }
        }
        if let Some(steps) = &o.steps {
            match target {
                Target::SweepSteps => self.sweep_steps.steps = steps.clone(),
                Target::Decode | Target::SweepSnr => {
                    single("--steps", steps.len())?;
                    self.decode.steps = steps[0];
                }
                _ => return Err(reject("--steps")),
            }
        }
        if let Some(ch) = o.channel {
            match target {
                Target::Decode => self.decode.channel = ch,
                Target::SweepSnr => self.sweep_snr.channels = vec![ch],
                Target::SweepSteps => self.sweep_steps.channel = ch,
                _ => return Err(reject("--channel")),
            }
        }
        let decodes = matches!(target, Target::Decode | Target::SweepSnr | Target::SweepSteps);
        if let Some(s) = o.solver {
            if !decodes {
                return Err(reject("--solver"));
            }
            self.decode.solver = s;
        }
        if o.debias || o.fast_fading {
            if !decodes {
                return Err(reject(if o.debias { "--debias" } else { "--fast-fading" }));
            }
            self.decode.debias |= o.debias;
            self.decode.fast_fading |= o.fast_fading;
        }
        if let Some(ck) = &o.checkpoint {
            if !decodes {
                return Err(reject("--checkpoint"));
            }
            self.decode.checkpoint = Some(ck.clone());
            self.decode.field = FieldChoice::Trained;
        }
        if let Some(d) = &o.data {
            self.data.path = Some(d.clone());
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<(), UsageError> {
        let bad = |m: String| Err(UsageError(m));
        if !(self.sigma_max.is_finite() && self.sigma_max > 0.0) {
            return bad(format!("sigma_max must be positive, got {}", self.sigma_max));
        }
        if !(0.0..1.0).contains(&self.data.holdout) {
            return bad(format!("data.holdout must be in [0, 1), got {}", self.data.holdout));
        }
        if self.data.downsample == 0 {
            return bad("data.downsample must be positive".into());
        }
        if self.decode.steps == 0 || self.sweep_steps.steps.contains(&0) {
            return bad("ODE step counts must be positive".into());
        }
        if self.decode.messages == 0 || self.sweep_snr.messages == 0 || self.sweep_steps.messages == 0 {
            return bad("message counts must be positive".into());
        }
        if self.decode.mimo.contains(&0) {
            return bad("decode.mimo antenna counts must be positive".into());
        }
        if let Some(rms) = self.decode.signal_rms {
            if !(rms.is_finite() && rms > 0.0) {
                return bad(format!("decode.signal_rms must be positive, got {rms}"));
            }
        }
        let snrs = [self.decode.snr_db, self.sweep_steps.snr_db]
            .into_iter()
            .chain(self.calibrate.snr_db.iter().copied())
            .chain(self.sweep_snr.snr_db.iter().copied());
        for s in snrs {
            if !s.is_finite() {
                return bad(format!("SNR values must be finite, got {s}"));
            }
        }
        self.train_config(0)
            .validate()
            .map_err(|e| UsageError(format!("train: {e}")))
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            final_learning_rate: t.final_learning_rate,
            seed,
            schedule: self.schedule(),
            dataset_ref: String::new(),
            log_every: t.log_every,
            hidden_dims: t.hidden_dims.clone(),
            time_features: t.time_features,
            checkpoint_path: None,
        }
    }

    /// Link settings from `[decode]` at one operating point.
    pub fn link(&self, channel: ChannelKind, snr_db: f64, signal_rms: f64) -> LinkConfig {
        let d = &self.decode;
        LinkConfig {
            schedule: self.schedule(),
            solver: d.solver,
            steps: d.steps,
            clamp: d.clamp,
            peak: d.peak,
            mimo: (d.mimo[0], d.mimo[1]),
            fading: FadingOptions {
                fast_fading: d.fast_fading,
                debias: d.debias,
            },
            seed: self.seed(),
            ..LinkConfig::new(channel, snr_db, signal_rms)
        }
    }
}

/// Parse `"0,3,5"` style lists.
pub fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    let items: Vec<T> = s
        .split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<_, _>>()?;
    if items.is_empty() {
        Err("empty list".into())
    } else {
        Ok(items)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("sead = 3").is_err());
        assert!(RunConfig::from_toml("[train]\nepoch = 3").is_err());
    }

    #[test]
    fn flags_override_the_file() {
        let mut cfg = RunConfig::from_toml("seed = 4\n[decode]\nsnr_db = 3.0\nsteps = 7").unwrap();
        let o = Overrides {
            snr: Some(vec![12.0]),
            ..Overrides::default()
        };
        cfg.apply(Target::Decode, &o).unwrap();
        assert_eq!(cfg.decode.snr_db, 12.0);
        assert_eq!(cfg.decode.steps, 7);
        assert_eq!(cfg.seed(), 4);
    }

    #[test]
    fn irrelevant_flags_are_usage_errors() {
        let mut cfg = RunConfig::default();
        let o = Overrides {
            steps: Some(vec![3]),
            ..Overrides::default()
        };
        assert!(cfg.apply(Target::Calibrate, &o).is_err());
        let o = Overrides {
            snr: Some(vec![1.0, 2.0]),
            ..Overrides::default()
        };
        assert!(cfg.apply(Target::Decode, &o).is_err());
    }

    #[test]
    fn lists_parse() {
        assert_eq!(parse_list::<f64>("0, 3,5").unwrap(), vec![0.0, 3.0, 5.0]);
        assert!(parse_list::<usize>("2,x").is_err());
        assert!(parse_list::<usize>("").is_err());
    }
}
