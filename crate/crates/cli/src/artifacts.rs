//! Output directory bookkeeping: CSV and JSON artifacts, their hashes and row counts, and
//! the run manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Environment variable naming the directory that run directories are created in.
pub const OUTPUT_ROOT_VAR: &str = "MFGLAB_OUTPUT_ROOT";
pub const DEFAULT_OUTPUT_ROOT: &str = "mfglab-out";

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_VAR)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT))
}

/// Shortest round-trip representation, in exponent form.
pub fn num(v: f64) -> String {
    format!("{v:e}")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArtifactEntry {
    pub file: String,
    pub format: &'static str,
    /// Data rows for CSV (header excluded), lines for JSON.
    pub rows: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InputEntry {
    pub path: String,
    pub sha256: String,
}

pub struct Artifacts {
    dir: PathBuf,
    entries: Vec<ArtifactEntry>,
    inputs: Vec<InputEntry>,
    residuals: BTreeMap<String, f64>,
    constants: BTreeMap<String, Value>,
}

impl Artifacts {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir.display(), e))?;
        Ok(Artifacts {
            dir: dir.to_path_buf(),
            entries: Vec::new(),
            inputs: Vec::new(),
            residuals: BTreeMap::new(),
            constants: BTreeMap::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn write(&mut self, name: &str, format: &'static str, bytes: Vec<u8>, rows: usize) -> Result<(), CliError> {
        let path = self.dir.join(name);
        std::fs::write(&path, &bytes).map_err(|e| CliError::io(path.display(), e))?;
        self.entries.push(ArtifactEntry {
            file: name.into(),
            format,
            rows,
            sha256: sha256_hex(&bytes),
        });
        Ok(())
    }

    /// Writes a CSV file from string records.
    pub fn csv<I, R>(&mut self, name: &str, header: &[&str], records: I) -> Result<usize, CliError>
    where
        I: IntoIterator<Item = R>,
        R: IntoIterator<Item = String>,
    {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| CliError::io(name, e);
        w.write_record(header).map_err(err)?;
        let mut rows = 0;
        for r in records {
            w.write_record(r).map_err(err)?;
            rows += 1;
        }
        let bytes = w.into_inner().map_err(|e| CliError::io(name, e))?;
        self.write(name, "csv", bytes, rows)?;
        Ok(rows)
    }

    /// Writes a CSV file of numbers.
    pub fn numeric_csv<I>(&mut self, name: &str, header: &[&str], records: I) -> Result<usize, CliError>
    where
        I: IntoIterator<Item = Vec<f64>>,
    {
        self.csv(name, header, records.into_iter().map(|r| r.into_iter().map(num)))
    }

    pub fn json<S: Serialize>(&mut self, name: &str, value: &S) -> Result<(), CliError> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::io(name, e))?;
        bytes.push(b'\n');
        let lines = bytes.iter().filter(|&&b| b == b'\n').count();
        self.write(name, "json", bytes, lines)
    }

    pub fn input_file(&mut self, path: &Path) -> Result<Vec<u8>, CliError> {
        let bytes = std::fs::read(path).map_err(|e| CliError::Validation {
            field: "problem.input".into(),
            message: format!("{}: {e}", path.display()),
        })?;
        self.inputs.push(InputEntry {
            path: path.display().to_string(),
            sha256: sha256_hex(&bytes),
        });
        Ok(bytes)
    }

    pub fn residual(&mut self, name: &str, value: f64) {
        self.residuals.insert(name.into(), value);
    }

    pub fn constant<S: Serialize>(&mut self, name: &str, value: S) {
        self.constants
            .insert(name.into(), serde_json::to_value(value).unwrap_or(Value::Null));
    }

    pub fn constants(&self) -> &BTreeMap<String, Value> {
        &self.constants
    }

    /// Writes `manifest.json` and returns its contents.
    pub fn finish(self, meta: ManifestMeta) -> Result<Value, CliError> {
        let manifest = json!({
            "tool": "mfglab",
            "version": env!("CARGO_PKG_VERSION"),
            "core_version": mfg_core::VERSION,
            "pipeline": meta.pipeline,
            "status": meta.status,
            "config_sha256": meta.config_sha256,
            "config": meta.config,
            "inputs": self.inputs,
            "artifacts": self.entries,
            "residuals": self.residuals,
            "constants": self.constants,
            "wall_time_s": meta.wall_time_s,
        });
        let path = self.dir.join("manifest.json");
        let mut bytes = serde_json::to_vec_pretty(&manifest).map_err(|e| CliError::io("manifest", e))?;
        bytes.push(b'\n');
        std::fs::write(&path, bytes).map_err(|e| CliError::io(path.display(), e))?;
        Ok(manifest)
    }
}

pub struct ManifestMeta {
    pub pipeline: &'static str,
    pub status: &'static str,
    pub config_sha256: String,
    pub config: Value,
    pub wall_time_s: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for v in [0.1, -3.25e-17, 1e300, 0.0, 2.0 / 3.0] {
            assert_eq!(num(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn hashes_are_hex() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
