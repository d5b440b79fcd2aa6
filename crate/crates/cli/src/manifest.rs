//! Run manifests and resumable CSV tables.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use ltt_core::data_io::{read_csv, write_csv, Cell};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    /// SHA-256 of the command and resolved configuration.
    pub config_hash: String,
    pub config: RunConfig,
    pub outputs: Vec<String>,
    #[serde(default)]
    pub summary: serde_json::Value,
}

impl Manifest {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Manifest {
            tool: "ltt".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed: config.seed(),
            config_hash: config_hash(command, config),
            config: config.clone(),
            outputs: Vec::new(),
            summary: serde_json::Value::Null,
        }
    }

    pub fn read(dir: &Path) -> Option<Manifest> {
        let text = fs::read_to_string(dir.join(MANIFEST_FILE)).ok()?;
        serde_json::from_str(&text).ok()
    }

    pub fn write(&self, dir: &Path) -> anyhow::Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        atomic_write(&path, text.as_bytes())
    }
}

pub fn config_hash(command: &str, config: &RunConfig) -> String {
    let body = serde_json::to_string(config).expect("configuration serializes");
    let mut h = Sha256::new();
    h.update(command.as_bytes());
    h.update([0]);
    h.update(body.as_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn atomic_write(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))
}

/// A CSV whose rows are filled in any order and always written in plan order.
///
/// The leading `key_cols` cells identify a row, the last column holds an
/// error message. Rows with an empty error column count as done and are kept
/// when a run with the same configuration hash is resumed.
#[derive(Debug)]
pub struct ResumableTable {
    path: PathBuf,
    header: Vec<&'static str>,
    key_cols: usize,
    keys: Vec<Vec<String>>,
    rows: Vec<Option<Vec<Cell>>>,
}

impl ResumableTable {
    pub fn new(path: PathBuf, header: Vec<&'static str>, key_cols: usize, keys: Vec<Vec<Cell>>) -> Self {
        let keys: Vec<Vec<String>> = keys.iter().map(|k| k.iter().map(Cell::render).collect()).collect();
        let rows = vec![None; keys.len()];
        ResumableTable {
            path,
            header,
            key_cols,
            keys,
            rows,
        }
    }

    /// Take finished rows from an existing file. Returns how many were reused.
    pub fn resume(&mut self) -> anyhow::Result<usize> {
        if !self.path.exists() {
            return Ok(0);
        }
        let (header, rows) = read_csv(&self.path)?;
        if header != self.header {
            return Ok(0);
        }
        let mut reused = 0;
        for row in rows {
            if row.last().is_some_and(|e| !e.is_empty()) {
                continue;
            }
            if let Some(i) = self.keys.iter().position(|k| k[..] == row[..self.key_cols]) {
                if self.rows[i].is_none() {
                    self.rows[i] = Some(row.into_iter().map(Cell::Text).collect());
                    reused += 1;
                }
            }
        }
        Ok(reused)
    }

    pub fn is_done(&self, i: usize) -> bool {
        self.rows[i].is_some()
    }

    pub fn pending(&self) -> Vec<usize> {
        (0..self.rows.len()).filter(|&i| !self.is_done(i)).collect()
    }

    /// Store row `i` and rewrite the file.
    pub fn set(&mut self, i: usize, row: Vec<Cell>) -> anyhow::Result<()> {
        anyhow::ensure!(
            row.len() == self.header.len(),
            "row has {} cells, header has {}",
            row.len(),
            self.header.len()
        );
        self.rows[i] = Some(row);
        self.flush()
    }

    pub fn flush(&self) -> anyhow::Result<()> {
        let rows: Vec<Vec<Cell>> = self.rows.iter().flatten().cloned().collect();
        let tmp = self.path.with_extension("csv.tmp");
        write_csv(&tmp, &self.header, &rows)?;
        fs::rename(&tmp, &self.path).with_context(|| format!("writing {}", self.path.display()))
    }

    pub fn rows(&self) -> impl Iterator<Item = &Vec<Cell>> {
        self.rows.iter().flatten()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_tracks_command_and_config() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.seed = Some(9);
        assert_eq!(config_hash("train", &a), config_hash("train", &a.clone()));
        assert_ne!(config_hash("train", &a), config_hash("train", &b));
        assert_ne!(config_hash("train", &a), config_hash("decode", &a));
        assert_eq!(config_hash("train", &a).len(), 64);
    }

    #[test]
    fn table_resumes_finished_rows_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let keys = || vec![vec![Cell::Int(1)], vec![Cell::Int(2)], vec![Cell::Int(3)]];
        let header = vec!["k", "v", "error"];
        let mut t = ResumableTable::new(path.clone(), header.clone(), 1, keys());
        t.set(2, vec![Cell::Int(3), Cell::Float(0.5), "".into()]).unwrap();
        t.set(0, vec![Cell::Int(1), Cell::Float(f64::NAN), "boom".into()])
            .unwrap();

        let mut again = ResumableTable::new(path.clone(), header, 1, keys());
        assert_eq!(again.resume().unwrap(), 1);
        assert_eq!(again.pending(), vec![0, 1]);
        let (_, rows) = read_csv(&path).unwrap();
        assert_eq!(rows[0][0], "1");
        assert_eq!(rows[1][0], "3");
    }
}
