//! One module per subcommand. Each `run` takes the parsed flags plus the raw
//! argv for the manifest.

pub mod diagnose;
pub mod eval;
pub mod synth;
pub mod train;

use std::fs;
use std::path::Path;

use anyhow::Context;

pub(crate) fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Tab-separated writer; cells are written as given.
pub(crate) fn tsv_writer(path: &Path) -> anyhow::Result<csv::Writer<fs::File>> {
    csv::WriterBuilder::new()
        .delimiter(b'\t')
        .from_path(path)
        .with_context(|| format!("creating {}", path.display()))
}

/// Shortest round-tripping rendering; empty for a missing value.
pub(crate) fn cell(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}
