use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use flipkit::interchange::{manifest_path, read_json, read_jsonl, write_json, write_jsonl, Validate};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};
use crate::table::Table;

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

pub fn require_seed(seed: Option<u64>) -> CliResult<u64> {
    seed.ok_or_else(|| CliError::Usage("this subcommand is randomized: pass --seed or set PSF_SEED".into()))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// Audit record written next to the outputs of every run.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub seed: Option<u64>,
    pub config: BTreeMap<String, serde_json::Value>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub parallel: bool,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// One subcommand invocation: checked inputs, validated outputs, manifest.
pub struct Run {
    subcommand: String,
    out_dir: PathBuf,
    seed: Option<u64>,
    config: BTreeMap<String, serde_json::Value>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    started: u64,
}

impl Run {
    pub fn new(subcommand: &str, out_dir: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
        Ok(Run {
            subcommand: subcommand.to_string(),
            out_dir: out_dir.to_path_buf(),
            seed: None,
            config: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: now(),
        })
    }

    pub fn seed(&mut self, seed: u64) -> u64 {
        self.seed = Some(seed);
        seed
    }

    pub fn config(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).unwrap_or(serde_json::Value::Null);
        self.config.insert(key.to_string(), v);
    }

    /// Registers an input file, failing early when it does not exist. Matrix
    /// containers bring their sidecar manifest along.
    pub fn input<'a>(&mut self, path: &'a Path) -> CliResult<&'a Path> {
        if !path.is_file() {
            return Err(CliError::Missing(path.to_path_buf()));
        }
        self.inputs.push(path.to_path_buf());
        let side = manifest_path(path);
        if path.extension().is_some_and(|e| e == "psft") && side.is_file() {
            self.inputs.push(side);
        }
        Ok(path)
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.out_dir.join(file)
    }

    /// Records a file written by library code.
    pub fn output(&mut self, path: PathBuf) {
        let side = manifest_path(&path);
        self.outputs.push(path.clone());
        if path.extension().is_some_and(|e| e == "psft") && side.is_file() {
            self.outputs.push(side);
        }
    }

    /// Writes pretty JSON and reads it back through its own schema.
    pub fn write_json<T: Serialize + DeserializeOwned>(&mut self, file: &str, value: &T) -> CliResult<()> {
        let path = self.path(file);
        write_json(&path, value)?;
        let back: T = read_json(&path)?;
        if serde_json::to_value(&back).ok() != serde_json::to_value(value).ok() {
            return Err(CliError::Schema(path));
        }
        self.outputs.push(path);
        Ok(())
    }

    pub fn write_jsonl<T: Serialize + DeserializeOwned + Validate>(&mut self, file: &str, records: &[T]) -> CliResult<()> {
        let path = self.path(file);
        self.write_jsonl_at(path, records)
    }

    pub fn write_jsonl_at<T: Serialize + DeserializeOwned + Validate>(&mut self, path: PathBuf, records: &[T]) -> CliResult<()> {
        write_jsonl(&path, records)?;
        let back: Vec<T> = read_jsonl(&path)?;
        if back.len() != records.len() {
            return Err(CliError::Schema(path));
        }
        self.outputs.push(path);
        Ok(())
    }

    pub fn write_csv(&mut self, file: &str, table: &Table) -> CliResult<()> {
        let path = self.path(file);
        table.write(&path)?;
        self.outputs.push(path);
        Ok(())
    }

    pub fn write_text(&mut self, file: &str, text: &str) -> CliResult<()> {
        let path = self.path(file);
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        self.outputs.push(path);
        Ok(())
    }

    pub fn finish(self) -> CliResult<()> {
        let digests = |paths: &[PathBuf]| -> CliResult<Vec<FileDigest>> {
            paths
                .iter()
                .map(|p| {
                    Ok(FileDigest {
                        path: p.display().to_string(),
                        sha256: sha256_file(p)?,
                    })
                })
                .collect()
        };
        let manifest = RunManifest {
            tool: "flipkit".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            subcommand: self.subcommand.clone(),
            seed: self.seed,
            config: self.config.clone(),
            inputs: digests(&self.inputs)?,
            outputs: digests(&self.outputs)?,
            started_unix: self.started,
            finished_unix: now(),
            parallel: cfg!(feature = "parallel"),
        };
        let name = format!("{}.manifest.json", self.subcommand.replace(' ', "-"));
        write_json(self.out_dir.join(name), &manifest)?;
        Ok(())
    }
}
