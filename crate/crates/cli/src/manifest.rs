//! Run manifests: everything needed to re-run a command and get the same bytes.
//! No timestamps or host details, so re-running writes an identical manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub role: String,
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub tool: String,
    pub tool_version: String,
    pub subcommand: String,
    /// Arguments after the program name, as given.
    pub argv: Vec<String>,
    /// Every resolved parameter, defaults included.
    pub params: serde_json::Value,
    pub root_seed: Option<u64>,
    pub enum_cap: u64,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl InputDigest {
    pub fn of(role: &str, path: &Path) -> CliResult<Self> {
        Ok(Self {
            role: role.to_string(),
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        })
    }
}

impl RunManifest {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        let probe: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| CliError::input(format!("{}: not valid JSON: {e}", path.display())))?;
        match probe.get("schema_version").and_then(|v| v.as_u64()) {
            Some(v) if v == MANIFEST_SCHEMA_VERSION as u64 => {}
            other => {
                return Err(CliError::input(format!(
                    "{}: unsupported manifest schema_version {other:?}",
                    path.display()
                )))
            }
        }
        serde_json::from_value(probe).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes") + "\n";
        fs::write(path, text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
    }

    /// Fail if any recorded input changed since the manifest was written.
    pub fn verify_inputs(&self) -> CliResult<()> {
        for input in &self.inputs {
            let now = sha256_file(Path::new(&input.path))?;
            if now != input.sha256 {
                return Err(CliError::input(format!(
                    "{} input {} changed since the manifest was written (sha256 {} != {})",
                    input.role, input.path, now, input.sha256
                )));
            }
        }
        Ok(())
    }
}

/// Default manifest location for a run.
pub fn manifest_path(subcommand: &str, out: Option<&Path>, explicit: Option<&Path>) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    match out {
        Some(out) => {
            let mut name = out.as_os_str().to_owned();
            name.push(".manifest.json");
            PathBuf::from(name)
        }
        None => PathBuf::from(format!("{subcommand}.manifest.json")),
    }
}

/// `argv` with the value of `--out` replaced (or appended).
pub fn with_out(argv: &[String], out: &Path) -> Vec<String> {
    let out = out.display().to_string();
    let mut result = Vec::with_capacity(argv.len() + 2);
    let mut replaced = false;
    let mut iter = argv.iter();
    while let Some(a) = iter.next() {
        if a == "--out" {
            iter.next();
            result.extend(["--out".to_string(), out.clone()]);
            replaced = true;
        } else if a.starts_with("--out=") {
            result.push(format!("--out={out}"));
            replaced = true;
        } else {
            result.push(a.clone());
        }
    }
    if !replaced {
        result.extend(["--out".to_string(), out]);
    }
    result
}
