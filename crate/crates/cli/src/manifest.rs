use crate::error::{CliError, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub const MANIFEST_FILE: &str = "run-manifest.json";

/// What one invocation did, enough to run it again.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub checkpoint_format: u32,
    pub command: String,
    /// Arguments after the program name, without `--out`.
    pub args: Vec<String>,
    pub out: PathBuf,
    pub config_hash: Option<String>,
    pub seeds: BTreeMap<String, u64>,
    /// Files written, relative to `out`.
    pub outputs: Vec<String>,
    #[serde(default)]
    pub details: serde_json::Value,
}

impl RunManifest {
    pub fn new(command: &str, args: &[String], out: &Path) -> Self {
        Self {
            tool: "glyphgen".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            checkpoint_format: glyphgen::checkpoint::FORMAT_VERSION,
            command: command.into(),
            args: strip_out(args),
            out: out.to_path_buf(),
            config_hash: None,
            seeds: BTreeMap::new(),
            outputs: Vec::new(),
            details: serde_json::Value::Null,
        }
    }

    pub fn seed(&mut self, name: &str, value: u64) -> &mut Self {
        self.seeds.insert(name.into(), value);
        self
    }

    pub fn output(&mut self, name: impl Into<String>) -> &mut Self {
        self.outputs.push(name.into());
        self
    }

    pub fn write(&self) -> Result<PathBuf> {
        let path = self.out.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).map_err(glyphgen::Error::from)?;
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Ok(serde_json::from_str(&text).map_err(glyphgen::Error::from)?)
    }

    /// The argument vector that reproduces this run into `out`.
    pub fn replay_args(&self, out: Option<&Path>) -> Vec<String> {
        let mut args = self.args.clone();
        args.push("--out".into());
        args.push(out.unwrap_or(&self.out).display().to_string());
        args
    }
}

fn strip_out(args: &[String]) -> Vec<String> {
    let mut kept = Vec::with_capacity(args.len());
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--out" {
            it.next();
        } else if !a.starts_with("--out=") {
            kept.push(a.clone());
        }
    }
    kept
}
