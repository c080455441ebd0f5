//! Provenance records written next to every stage output.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const META_SUFFIX: &str = ".meta.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path, bytes: &[u8]) -> Self {
        FileDigest { path: path.display().to_string(), sha256: sha256_hex(bytes) }
    }
}

/// One stage invocation: what went in, with which parameters, and what came
/// out. Inputs and outputs are keyed by role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineMeta {
    pub stage: String,
    pub tool_version: String,
    /// RFC 3339, UTC.
    pub created: String,
    pub inputs: BTreeMap<String, FileDigest>,
    pub params: serde_json::Value,
    pub outputs: BTreeMap<String, FileDigest>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// `out.dsrast` → `out.dsrast.meta.json`.
pub fn meta_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(META_SUFFIX);
    path.with_file_name(name)
}

impl PipelineMeta {
    pub fn new(stage: &str, params: &impl Serialize) -> Self {
        PipelineMeta {
            stage: stage.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            created: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            inputs: BTreeMap::new(),
            params: serde_json::to_value(params).unwrap_or(serde_json::Value::Null),
            outputs: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, role: &str, path: &Path, bytes: &[u8]) {
        self.inputs.insert(role.to_string(), FileDigest::of(path, bytes));
    }

    pub fn output(&mut self, role: &str, path: &Path, bytes: &[u8]) {
        self.outputs.insert(role.to_string(), FileDigest::of(path, bytes));
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    /// Writes the record as the sidecar of `output`.
    pub fn write_for(&self, output: &Path) -> Result<()> {
        self.write(&meta_path(output))
    }

    /// Checks `bytes` against the digest this record holds for a file with
    /// the same name as `path`. Files the record does not mention pass.
    pub fn verify(&self, path: &Path, bytes: &[u8]) -> Result<()> {
        let name = path.file_name();
        let recorded = self.outputs.values().find(|d| Path::new(&d.path).file_name() == name);
        if let Some(d) = recorded {
            let found = sha256_hex(bytes);
            if found != d.sha256 {
                return Err(Error::HashMismatch {
                    path: path.display().to_string(),
                    recorded: d.sha256.clone(),
                    found,
                });
            }
        }
        Ok(())
    }
}

/// Reads a file and, when it has a sidecar record, checks it against the
/// digest its producer wrote.
pub fn read_verified(path: &Path) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| io_context(e, path))?;
    let mp = meta_path(path);
    if mp.is_file() {
        PipelineMeta::read(&mp)?.verify(path, &bytes)?;
    }
    Ok(bytes)
}

pub(crate) fn io_context(e: std::io::Error, path: &Path) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sidecar_name_and_digest() {
        assert_eq!(meta_path(Path::new("a/b/dsm.dsrast")), PathBuf::from("a/b/dsm.dsrast.meta.json"));
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn tampered_output_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.bin");
        fs::write(&p, b"payload").unwrap();
        let mut m = PipelineMeta::new("test", &serde_json::json!({"k": 1}));
        m.output("x", &p, b"payload");
        m.write_for(&p).unwrap();
        assert_eq!(read_verified(&p).unwrap(), b"payload");
        fs::write(&p, b"payloaD").unwrap();
        assert!(matches!(read_verified(&p), Err(Error::HashMismatch { .. })));
        let back = PipelineMeta::read(&meta_path(&p)).unwrap();
        assert_eq!(back, m);
    }
}
