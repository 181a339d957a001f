//! Run manifests and atomic artifact writes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::failure::Failure;

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn hash_file(path: &Path) -> Result<String, Failure> {
    let bytes = fs::read(path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

/// Writes through a temporary sibling so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Failure::data(format!("{}: {e}", tmp.display())))?;
    fs::rename(&tmp, path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRef {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to repeat a run. `wall_clock_seconds` and `out_dir`
/// are the only fields expected to differ between identical runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: BTreeMap<String, FileRef>,
    /// Paths relative to `out_dir`.
    pub artifacts: BTreeMap<String, FileRef>,
    pub scores: serde_json::Value,
    pub out_dir: String,
    pub wall_clock_seconds: f64,
}

impl RunManifest {
    pub fn new(command: &str, out_dir: &Path) -> Self {
        RunManifest {
            tool: "tablegraph".to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config: serde_json::Value::Null,
            seeds: BTreeMap::new(),
            inputs: BTreeMap::new(),
            artifacts: BTreeMap::new(),
            scores: serde_json::Value::Null,
            out_dir: out_dir.display().to_string(),
            wall_clock_seconds: 0.0,
        }
    }

    pub fn input(&mut self, name: &str, path: &Path) -> Result<(), Failure> {
        let r = FileRef {
            path: path.display().to_string(),
            sha256: hash_file(path)?,
        };
        self.inputs.insert(name.to_string(), r);
        Ok(())
    }

    /// Writes `bytes` to `out_dir/file` and records its hash.
    pub fn artifact(&mut self, name: &str, out_dir: &Path, file: &str, bytes: &[u8]) -> Result<(), Failure> {
        write_atomic(&out_dir.join(file), bytes)?;
        self.artifacts.insert(
            name.to_string(),
            FileRef {
                path: file.to_string(),
                sha256: sha256_hex(bytes),
            },
        );
        Ok(())
    }

    /// Records an artifact some other writer already placed in `out_dir`.
    pub fn existing_artifact(&mut self, name: &str, out_dir: &Path, file: &str) -> Result<(), Failure> {
        let sha256 = hash_file(&out_dir.join(file))?;
        self.artifacts.insert(
            name.to_string(),
            FileRef {
                path: file.to_string(),
                sha256,
            },
        );
        Ok(())
    }

    pub fn write(&self, out_dir: &Path) -> Result<(), Failure> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| Failure::data(e.to_string()))?;
        text.push('\n');
        write_atomic(&out_dir.join(MANIFEST_FILE), text.as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self, Failure> {
        let text = fs::read_to_string(path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Failure::data(format!("{}: {e}", path.display())))
    }

    /// The manifest with run-specific fields blanked, for comparing runs.
    pub fn comparable(&self) -> RunManifest {
        RunManifest {
            out_dir: String::new(),
            wall_clock_seconds: 0.0,
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_of_abc() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn manifest_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = RunManifest::new("train", dir.path());
        m.artifact("model", dir.path(), "a.bin", b"xyz").unwrap();
        m.seeds.insert("train".into(), 3);
        m.write(dir.path()).unwrap();
        let back = RunManifest::read(&dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(back, m);
        assert_eq!(std::fs::read(dir.path().join("a.bin")).unwrap(), b"xyz");
        assert!(!dir.path().join("a.bin.tmp").exists());
    }
}
