//! JSON checkpoints: `{version, architecture, layers: [{w: [[..]], b: [..]}]}`.
//!
//! Floats are written with 17 significant digits so every parameter survives
//! a save/load cycle bit for bit.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::ser::Formatter;

use super::{DenseLayer, FieldArchitecture, FieldParams};
use crate::{Error, Result};

pub const CHECKPOINT_VERSION: u64 = 1;

const FIELDS: [&str; 3] = ["version", "architecture", "layers"];

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    version: u64,
    architecture: FieldArchitecture,
    layers: Vec<LayerFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerFile {
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
}

struct FullPrecision;

impl Formatter for FullPrecision {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }
}

pub fn to_json(params: &FieldParams) -> String {
    let file = CheckpointFile {
        version: CHECKPOINT_VERSION,
        architecture: params.architecture().clone(),
        layers: params
            .layers()
            .iter()
            .map(|l| LayerFile {
                w: l.w.chunks_exact(l.in_dim).map(<[f64]>::to_vec).collect(),
                b: l.b.clone(),
            })
            .collect(),
    };
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, FullPrecision);
    file.serialize(&mut ser)
        .expect("serializing finite parameters cannot fail");
    out.push(b'\n');
    String::from_utf8(out).expect("JSON output is UTF-8")
}

fn truncation_message(text: &str, err: &serde_json::Error) -> String {
    let present: Vec<&str> = FIELDS
        .iter()
        .copied()
        .filter(|f| text.contains(&format!("\"{f}\":")))
        .collect();
    let missing: Vec<&str> = FIELDS.iter().copied().filter(|f| !present.contains(f)).collect();
    match present.last() {
        Some(last) => format!("truncated checkpoint: field `{last}` is incomplete, missing fields {missing:?} ({err})"),
        None => format!("truncated checkpoint: missing fields {missing:?} ({err})"),
    }
}

pub fn from_json(text: &str) -> Result<FieldParams> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| {
        if e.is_eof() {
            Error::Parse(truncation_message(text, &e))
        } else {
            Error::Parse(format!("malformed checkpoint: {e}"))
        }
    })?;
    let version = value
        .get("version")
        .ok_or_else(|| Error::Parse("missing field `version`".into()))?
        .as_u64()
        .ok_or_else(|| Error::Parse("field `version` must be an unsigned integer".into()))?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let file: CheckpointFile = serde_json::from_value(value).map_err(|e| Error::Parse(format!("checkpoint: {e}")))?;

    let layers = file
        .layers
        .into_iter()
        .enumerate()
        .map(|(l, lf)| {
            let out_dim = lf.w.len();
            let in_dim = lf.w.first().map_or(0, Vec::len);
            if let Some(r) = lf.w.iter().position(|row| row.len() != in_dim) {
                return Err(Error::Shape(format!(
                    "layer {l}: row {r} has {} weights, row 0 has {in_dim}",
                    lf.w[r].len()
                )));
            }
            Ok(DenseLayer {
                out_dim,
                in_dim,
                w: lf.w.into_iter().flatten().collect(),
                b: lf.b,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    FieldParams::from_layers(file.architecture, layers)
}

/// Write atomically: a sibling temp file is renamed over `path`, so an
/// interrupted save leaves the previous checkpoint intact.
pub fn save_checkpoint(params: &FieldParams, path: &Path) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, to_json(params)).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(FieldParams, FieldArchitecture)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let params = from_json(&text)?;
    let arch = params.architecture().clone();
    Ok((params, arch))
}
