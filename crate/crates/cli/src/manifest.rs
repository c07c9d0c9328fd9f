use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};
use time::format_description::well_known::Rfc3339;
use time::OffsetDateTime;

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self> {
        let data = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
        Ok(FileDigest {
            path: path.display().to_string(),
            sha256: hex::encode(Sha256::digest(&data)),
            bytes: data.len() as u64,
        })
    }
}

/// One record per run, written next to the run's outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config: Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub counts: BTreeMap<String, Value>,
    pub warnings: Vec<String>,
    pub started_at: String,
    pub finished_at: String,
    pub tool_version: &'static str,
}

fn now() -> String {
    OffsetDateTime::now_utc()
        .format(&Rfc3339)
        .unwrap_or_else(|_| "unknown".into())
}

pub struct ManifestBuilder {
    manifest: RunManifest,
    output_paths: Vec<PathBuf>,
}

impl ManifestBuilder {
    pub fn start(command: &str, config: Value) -> Self {
        ManifestBuilder {
            manifest: RunManifest {
                command: command.into(),
                argv: std::env::args().collect(),
                config,
                inputs: Vec::new(),
                outputs: Vec::new(),
                counts: BTreeMap::new(),
                warnings: Vec::new(),
                started_at: now(),
                finished_at: String::new(),
                tool_version: env!("CARGO_PKG_VERSION"),
            },
            output_paths: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.manifest.inputs.push(FileDigest::of(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: PathBuf) {
        self.output_paths.push(path);
    }

    pub fn count(&mut self, key: &str, value: impl Into<Value>) {
        self.manifest.counts.insert(key.into(), value.into());
    }

    pub fn warn(&mut self, message: String) {
        self.manifest.warnings.push(message);
    }

    /// Digests every registered output and writes `manifest.json` into `dir`.
    pub fn finish(mut self, dir: &Path) -> Result<PathBuf> {
        for p in &self.output_paths {
            self.manifest.outputs.push(FileDigest::of(p)?);
        }
        self.manifest.finished_at = now();
        let path = dir.join(MANIFEST_NAME);
        let text = serde_json::to_string_pretty(&self.manifest)?;
        fs::write(&path, text + "\n").with_context(|| format!("cannot write {}", path.display()))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_of_known_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x");
        fs::write(&p, b"abc").unwrap();
        let d = FileDigest::of(&p).unwrap();
        assert_eq!(
            d.sha256,
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(d.bytes, 3);
    }

    #[test]
    fn manifest_lists_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("o.txt");
        fs::write(&out, "hi").unwrap();
        let mut b = ManifestBuilder::start("test", serde_json::json!({"k": 1}));
        b.output(out);
        b.count("n", 2);
        let path = b.finish(dir.path()).unwrap();
        let v: Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
        assert_eq!(v["command"], "test");
        assert_eq!(v["outputs"].as_array().unwrap().len(), 1);
        assert_eq!(v["counts"]["n"], 2);
    }
}
