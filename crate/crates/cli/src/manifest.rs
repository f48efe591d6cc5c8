//! Artifact writing and the per-run manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_paths: Vec<PathBuf>,
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
    /// File name to sha256 of its contents.
    pub artifacts: BTreeMap<String, String>,
    /// Stage name to wall-clock milliseconds.
    pub timings_ms: BTreeMap<String, f64>,
    pub exit_code: i32,
    pub error: Option<String>,
}

/// Collects artifacts and timings while a command runs.
pub struct Run {
    pub manifest: RunManifest,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

impl Run {
    pub fn new(command: &str, config: Option<&Path>, seed: Option<u64>, out_dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
        Ok(Self {
            manifest: RunManifest {
                command: command.to_string(),
                config_paths: config.map(|p| vec![p.to_path_buf()]).unwrap_or_default(),
                seed,
                out_dir: out_dir.to_path_buf(),
                artifacts: BTreeMap::new(),
                timings_ms: BTreeMap::new(),
                exit_code: 0,
                error: None,
            },
        })
    }

    pub fn add_config(&mut self, path: &Path) {
        self.manifest.config_paths.push(path.to_path_buf());
    }

    pub fn write(&mut self, name: &str, contents: &[u8]) -> Result<PathBuf> {
        let path = self.manifest.out_dir.join(name);
        std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.manifest.artifacts.insert(name.to_string(), sha256_hex(contents));
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Runs `f` and records its wall-clock time under `stage`.
    pub fn timed<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let t0 = Instant::now();
        let out = f();
        self.manifest.timings_ms.insert(stage.to_string(), t0.elapsed().as_secs_f64() * 1e3);
        out
    }

    pub fn finish(mut self, exit_code: i32, error: Option<String>) -> Result<()> {
        self.manifest.exit_code = exit_code;
        self.manifest.error = error;
        let path = self.manifest.out_dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(&self.manifest)?;
        text.push('\n');
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_of_empty_input() {
        assert_eq!(sha256_hex(b""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }
}
