use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use causaltab::util::sha256_hex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Record of one invocation. `content_hash` covers every field except the
/// timestamps and the hash itself, so reruns with identical inputs agree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Value,
    /// Input path to SHA-256 of its bytes.
    pub inputs: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub tool_version: String,
    pub started_at: String,
    pub finished_at: String,
    pub outputs: BTreeMap<String, String>,
    pub details: Value,
    pub error: Option<String>,
    pub content_hash: String,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            config: Value::Null,
            inputs: BTreeMap::new(),
            seed: None,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            started_at: now(),
            finished_at: String::new(),
            outputs: BTreeMap::new(),
            details: Value::Null,
            error: None,
            content_hash: String::new(),
        }
    }

    pub fn record_input(&mut self, path: &Path) -> io::Result<()> {
        let bytes = fs::read(path)?;
        self.inputs.insert(path.display().to_string(), sha256_hex(&bytes));
        Ok(())
    }

    pub fn record_output(&mut self, role: &str, path: &Path) {
        self.outputs.insert(role.to_string(), path.display().to_string());
    }

    pub fn hash(&self) -> String {
        let mut body = self.clone();
        body.started_at.clear();
        body.finished_at.clear();
        body.content_hash.clear();
        sha256_hex(serde_json::to_string(&body).expect("manifest serializes").as_bytes())
    }

    /// Stamps the finish time and hash, then writes through a temporary file
    /// and a rename.
    pub fn finish(mut self, path: &Path) -> io::Result<Self> {
        self.finished_at = now();
        self.content_hash = self.hash();
        let text = serde_json::to_string_pretty(&self).map_err(io::Error::other)?;
        write_atomic(path, text.as_bytes())?;
        Ok(self)
    }

    pub fn load(path: &Path) -> io::Result<Self> {
        serde_json::from_slice(&fs::read(path)?).map_err(io::Error::other)
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let mut tmp = PathBuf::from(path);
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    tmp.set_file_name(format!(".{name}.tmp"));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

/// `<dir>/<stem>.manifest.json` next to a single-file output.
pub fn sidecar_path(output: &Path) -> PathBuf {
    let stem = output.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into());
    output.with_file_name(format!("{stem}.manifest.json"))
}
