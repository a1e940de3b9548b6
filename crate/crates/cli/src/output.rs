//! Output files and the per-directory manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const MANIFEST: &str = "manifest.json";

pub fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::data(format!("cannot create {}: {e}", dir.display())))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write(path, text.as_bytes())
}

pub fn write(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
}

#[derive(Serialize)]
struct Manifest<'a> {
    artifact: &'static str,
    version: &'static str,
    command: &'a str,
    seed: u64,
    config_sha256: String,
    config: &'a Value,
    /// sha256 of every file written next to the manifest.
    files: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Value::is_null")]
    info: Value,
}

/// Writes `manifest.json` into `dir`, hashing the listed files.
pub fn write_manifest(
    dir: &Path,
    command: &str,
    seed: u64,
    config: &Value,
    files: &[String],
    info: Value,
) -> CliResult<()> {
    let mut hashes = BTreeMap::new();
    for f in files {
        let bytes = fs::read(dir.join(f))?;
        hashes.insert(f.clone(), sha256_hex(&bytes));
    }
    let manifest = Manifest {
        artifact: "dspt",
        version: env!("CARGO_PKG_VERSION"),
        command,
        seed,
        config_sha256: sha256_hex(serde_json::to_string(config)?.as_bytes()),
        config,
        files: hashes,
        info,
    };
    write_json(&dir.join(MANIFEST), &manifest)
}

/// Makes a loss label safe for file names (`logitclip:0.5` → `logitclip_0.5`).
pub fn file_label(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect()
}
