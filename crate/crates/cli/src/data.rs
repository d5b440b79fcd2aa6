//! Dataset loading and the velocity field used for decoding.

use std::path::Path;

use anyhow::Context;
use ltt_core::data_io::{self, Dataset, GmmComponent, Shape};
use ltt_core::flow_path::{marginal_field_gaussian, marginal_field_gmm};
use ltt_core::student_field::{load_checkpoint, FieldParams};
use ltt_core::verification::load_mnist_8x8;
use ltt_core::{NoiseSchedule, VelocityField};

use crate::config::{DataConfig, RunConfig, Source};
use crate::UsageError;

fn require_file(path: &Path, what: &str) -> Result<(), UsageError> {
    if path.exists() {
        Ok(())
    } else {
        Err(UsageError(format!("{what} not found: {}", path.display())))
    }
}

/// Load or synthesize the configured dataset.
pub fn load(cfg: &DataConfig, seed: u64) -> anyhow::Result<Dataset> {
    let ds = match cfg.source {
        Source::Gaussian => {
            if cfg.mean.is_empty() {
                return Err(UsageError("data.mean must have at least one entry".into()).into());
            }
            data_io::synth_gaussian(&cfg.mean, cfg.std, cfg.n, seed)?
        }
        Source::Gmm => {
            data_io::synth_gmm(&cfg.components, cfg.n, seed).map_err(|e| UsageError(format!("data: {e}")))?
        }
        Source::Idx => {
            let images = cfg
                .path
                .as_deref()
                .ok_or_else(|| UsageError("data.path (IDX images file) is required for source = \"idx\"".into()))?;
            require_file(images, "dataset")?;
            if let Some(l) = &cfg.labels {
                require_file(l, "labels file")?;
            }
            let mut ds = data_io::load_idx(images, cfg.labels.as_deref())?;
            if let Some([h, w]) = cfg.crop {
                ds = data_io::crop_center(&ds, h, w)?;
            }
            if cfg.downsample > 1 {
                ds = data_io::downsample(&ds, cfg.downsample)?;
            }
            ds
        }
        Source::Mnist => {
            let dir = cfg.path.clone().unwrap_or_else(ltt_core::bundled_data_dir);
            require_file(&dir.join(ltt_core::verification::MNIST_IMAGES), "dataset")?;
            load_mnist_8x8(&dir)?
        }
        Source::Csv => {
            let path = cfg
                .path
                .as_deref()
                .ok_or_else(|| UsageError("data.path is required for source = \"csv\"".into()))?;
            require_file(path, "dataset")?;
            load_csv(path)?
        }
    };
    let ds = match cfg.limit {
        Some(n) => ds.take(n),
        None => ds,
    };
    if ds.is_empty() {
        return Err(UsageError("dataset is empty".into()).into());
    }
    Ok(ds)
}

fn load_csv(path: &Path) -> anyhow::Result<Dataset> {
    let (header, rows) = data_io::read_csv(path)?;
    let samples = rows
        .iter()
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .map(|c| data_io::parse_float(c))
                .collect::<Result<Vec<f64>, _>>()
                .with_context(|| format!("{}: row {}", path.display(), i + 1))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(Dataset::new(name, Shape::Flat(header.len()), samples)?)
}

/// Training and evaluation splits; evaluation falls back to the training
/// split when nothing is held out.
pub fn split(ds: &Dataset, holdout: f64) -> (Dataset, Dataset) {
    let n_eval = ((ds.len() as f64) * holdout).round() as usize;
    if n_eval == 0 || n_eval >= ds.len() {
        return (ds.clone(), ds.clone());
    }
    ds.split_at(ds.len() - n_eval)
}

/// A velocity field the decoder can run.
#[derive(Debug, Clone)]
pub enum Field {
    Trained(FieldParams),
    Gaussian {
        mean: Vec<f64>,
        std: f64,
        schedule: NoiseSchedule,
    },
    Gmm {
        components: Vec<GmmComponent>,
        schedule: NoiseSchedule,
    },
}

impl Field {
    /// Closed-form field for a synthetic source.
    pub fn exact(cfg: &RunConfig) -> Result<Field, UsageError> {
        let schedule = cfg.schedule();
        match cfg.data.source {
            Source::Gaussian => Ok(Field::Gaussian {
                mean: cfg.data.mean.clone(),
                std: cfg.data.std,
                schedule,
            }),
            Source::Gmm => Ok(Field::Gmm {
                components: cfg.data.components.clone(),
                schedule,
            }),
            other => Err(UsageError(format!(
                "decode.field = \"exact\" needs a gaussian or gmm source, not {other:?}"
            ))),
        }
    }

    pub fn from_checkpoint(path: &Path) -> anyhow::Result<Field> {
        require_file(path, "checkpoint")?;
        let (params, _) = load_checkpoint(path)?;
        Ok(Field::Trained(params))
    }
}

impl VelocityField for Field {
    fn dim(&self) -> Option<usize> {
        match self {
            Field::Trained(p) => p.dim(),
            Field::Gaussian { mean, .. } => Some(mean.len()),
            Field::Gmm { components, .. } => components.first().map(|c| c.mean.len()),
        }
    }

    fn velocity(&self, x: &[f64], t: f64) -> ltt_core::Result<Vec<f64>> {
        match self {
            Field::Trained(p) => p.velocity(x, t),
            Field::Gaussian { mean, std, schedule } => marginal_field_gaussian(x, t, mean, *std, schedule),
            Field::Gmm { components, schedule } => marginal_field_gmm(x, t, components, schedule),
        }
    }
}
