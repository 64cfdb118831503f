//! Run directory with a content-hashed manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use trex_core::{Error, Result};

pub const MANIFEST_SCHEMA: &str = "trex-manifest/1";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub sha256: String,
    pub schema: String,
    pub produced_by: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepEntry {
    pub seed: Option<u64>,
    pub config_sha256: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub steps: BTreeMap<String, StepEntry>,
    pub files: BTreeMap<String, FileEntry>,
}

impl Default for Manifest {
    fn default() -> Self {
        Manifest { schema: MANIFEST_SCHEMA.into(), steps: BTreeMap::new(), files: BTreeMap::new() }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io { path: path.to_path_buf(), source: e }
}

/// Hash of a file, or of every file below a directory in sorted order.
pub fn hash_path(path: &Path) -> Result<String> {
    if path.is_dir() {
        let mut names: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| io_err(path, e))?
            .map(|e| e.map(|e| e.path()).map_err(|err| io_err(path, err)))
            .collect::<Result<_>>()?;
        names.sort();
        let mut h = Sha256::new();
        for p in names {
            h.update(p.file_name().unwrap_or_default().as_encoded_bytes());
            h.update([0]);
            h.update(hash_path(&p)?.as_bytes());
        }
        Ok(hex::encode(h.finalize()))
    } else {
        let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
        Ok(sha256_hex(&bytes))
    }
}

/// One subcommand's view of the run directory.
pub struct Step {
    pub dir: PathBuf,
    command: String,
    seed: Option<u64>,
    config_sha256: String,
    inputs: BTreeMap<String, String>,
    outputs: Vec<(String, String)>,
}

impl Step {
    pub fn begin(dir: &Path, command: &str, seed: Option<u64>, config_text: &str) -> Result<Step> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        Ok(Step {
            dir: dir.to_path_buf(),
            command: command.into(),
            seed,
            config_sha256: sha256_hex(config_text.as_bytes()),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Path of a required input; records its hash.
    pub fn input(&mut self, name: &str) -> Result<PathBuf> {
        let p = self.path(name);
        if !p.exists() {
            return Err(Error::MissingArtifact(p));
        }
        self.inputs.insert(name.into(), hash_path(&p)?);
        Ok(p)
    }

    /// Records an external input by its own path.
    pub fn external_input(&mut self, path: &Path) -> Result<()> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        self.inputs.insert(path.display().to_string(), hash_path(path)?);
        Ok(())
    }

    pub fn write(&mut self, name: &str, schema: &str, contents: &[u8]) -> Result<PathBuf> {
        let p = self.path(name);
        fs::write(&p, contents).map_err(|e| io_err(&p, e))?;
        self.outputs.push((name.into(), schema.into()));
        Ok(p)
    }

    /// Registers an output something else already wrote.
    pub fn produced(&mut self, name: &str, schema: &str) {
        self.outputs.push((name.into(), schema.into()));
    }

    pub fn finish(self) -> Result<()> {
        let mpath = self.dir.join(MANIFEST_FILE);
        let mut manifest: Manifest = if mpath.exists() {
            let text = fs::read_to_string(&mpath).map_err(|e| io_err(&mpath, e))?;
            let m: Manifest = serde_json::from_str(&text)?;
            if m.schema != MANIFEST_SCHEMA {
                return Err(Error::Schema {
                    what: mpath.display().to_string(),
                    expected: MANIFEST_SCHEMA.into(),
                    found: m.schema,
                });
            }
            m
        } else {
            Manifest::default()
        };
        for (name, schema) in &self.outputs {
            let entry = FileEntry {
                sha256: hash_path(&self.dir.join(name))?,
                schema: schema.clone(),
                produced_by: self.command.clone(),
            };
            manifest.files.insert(name.clone(), entry);
        }
        manifest.steps.insert(
            self.command.clone(),
            StepEntry {
                seed: self.seed,
                config_sha256: self.config_sha256,
                inputs: self.inputs,
                outputs: self.outputs.into_iter().map(|(n, _)| n).collect(),
            },
        );
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        fs::write(&mpath, text).map_err(|e| io_err(&mpath, e))
    }
}
