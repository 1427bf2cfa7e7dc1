//! Run manifests, written next to every output.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub toolkit_version: &'static str,
    pub outputs: Vec<PathBuf>,
    pub started: String,
    pub finished: String,
}

impl RunManifest {
    pub fn begin(command: &str, config: serde_json::Value, seed: Option<u64>) -> Self {
        Self {
            command: command.to_string(),
            argv: std::env::args().collect(),
            config,
            seed,
            toolkit_version: env!("CARGO_PKG_VERSION"),
            outputs: Vec::new(),
            started: chrono::Utc::now().to_rfc3339(),
            finished: String::new(),
        }
    }

    pub fn finish(mut self, path: &Path) -> std::io::Result<()> {
        self.finished = chrono::Utc::now().to_rfc3339();
        let json = serde_json::to_vec_pretty(&self).map_err(std::io::Error::other)?;
        write_atomic(path, &json)
    }
}

/// Write through a temporary sibling and rename into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)
}

/// `out.json` → `out.manifest.json`.
pub fn manifest_path_for(output: &Path) -> PathBuf {
    let stem = output.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into());
    output.with_file_name(format!("{stem}.manifest.json"))
}
