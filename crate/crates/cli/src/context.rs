//! Input tracking, artifact envelopes and atomic output.

use std::io::Write;
use std::path::Path;

use langdist::analysis::LanguageTable;
use langdist::embedstore::{read_dataset, LabeledDataset};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{CliError, InFile, Result};

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

/// Per-run state: the seed and a digest of every input file read so far.
pub struct Ctx {
    pub command: &'static str,
    pub seed: u64,
    inputs: Vec<InputDigest>,
    outputs: Vec<String>,
}

impl Ctx {
    pub fn new(command: &'static str, seed: u64) -> Self {
        Self { command, seed, inputs: Vec::new(), outputs: Vec::new() }
    }

    pub fn read(&mut self, path: &str) -> Result<Vec<u8>> {
        let bytes = std::fs::read(path).map_err(|source| CliError::Io { path: path.to_owned(), source })?;
        if !self.inputs.iter().any(|d| d.path == path) {
            self.inputs.push(InputDigest {
                path: path.to_owned(),
                sha256: hex::encode(Sha256::digest(&bytes)),
                bytes: bytes.len(),
            });
        }
        Ok(bytes)
    }

    pub fn read_text(&mut self, path: &str) -> Result<String> {
        let bytes = self.read(path)?;
        String::from_utf8(bytes).map_err(|e| CliError::Input(format!("{path}: not UTF-8 ({e})")))
    }

    pub fn dataset(&mut self, path: &str) -> Result<LabeledDataset> {
        let bytes = self.read(path)?;
        read_dataset(bytes.as_slice()).in_file(path)
    }

    pub fn table(&mut self, path: &str) -> Result<LanguageTable> {
        let bytes = self.read(path)?;
        LanguageTable::read_csv(bytes.as_slice()).in_file(path)
    }

    pub fn json(&mut self, path: &str) -> Result<Value> {
        let bytes = self.read(path)?;
        serde_json::from_slice(&bytes).in_file(path)
    }

    /// Full artifact: command, seed, config, input digests and result.
    pub fn envelope(&self, config: &impl Serialize, result: &impl Serialize) -> Result<Value> {
        Ok(json!({
            "tool": "langdist",
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "seed": self.seed,
            "config": serde_json::to_value(config)?,
            "inputs": serde_json::to_value(&self.inputs)?,
            "result": serde_json::to_value(result)?,
        }))
    }

    pub fn write_json(&mut self, path: &str, value: &Value) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(path, text.as_bytes())
    }

    /// Writes `bytes` next to a `.meta.json` sidecar holding the envelope.
    pub fn write_with_meta(&mut self, path: &str, bytes: &[u8], config: &impl Serialize, meta: &impl Serialize) -> Result<()> {
        let env = self.envelope(config, meta)?;
        self.write(path, bytes)?;
        self.write_json(&format!("{path}.meta.json"), &env)
    }

    pub fn write(&mut self, path: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(Path::new(path), bytes).map_err(|source| CliError::Io { path: path.to_owned(), source })?;
        self.outputs.push(path.to_owned());
        Ok(())
    }

    /// Summary printed on stdout after a successful run.
    pub fn summary(&self, fields: Value) -> Value {
        json!({
            "command": self.command,
            "outputs": self.outputs,
            "summary": fields,
        })
    }
}

/// Temp file in the destination directory, then rename; a failed run leaves nothing behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}
