use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// What a command was asked to do and what it wrote.
///
/// Holds no timestamps or host details, so identical runs write identical
/// manifests. `argv` is replayed verbatim; relative paths resolve against
/// the directory `replay` is started from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    /// Fully resolved settings, defaults included.
    pub config: Value,
    pub datasets: Vec<String>,
    pub seed: Option<u64>,
    pub outputs: Vec<String>,
    pub tool_version: String,
}

impl RunManifest {
    pub fn new(command: &str, argv: &[String], config: Value) -> Self {
        RunManifest {
            command: command.to_string(),
            argv: argv.to_vec(),
            config,
            datasets: Vec::new(),
            seed: None,
            outputs: Vec::new(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    pub fn dataset(mut self, path: &Path) -> Self {
        self.datasets.push(path.display().to_string());
        self
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }
}

/// `<path>.<suffix>`, keeping the full original file name.
pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".");
    name.push(suffix);
    PathBuf::from(name)
}
